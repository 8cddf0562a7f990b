"""On-the-fly reduced bases from streamed solution snapshots.

Two update rules are available: incremental Gram-Schmidt QR, which keeps the
``r_max`` most recent directions, and the incremental (Brand) SVD, which keeps
singular values and accumulated right factors so the basis stays a POD basis
of the data seen since the last re-initialisation.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import dense_svd, thin_qr

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-8


@dataclass
class BasisState:
    n: int
    mode: str = "svd"  # "qr" or "svd"
    r_max: int | None = 10  # None: unbounded
    tol: float = 1e-9
    saturation: str = "reinit"  # svd only: "reinit" or "drop_oldest"
    Phi: np.ndarray = field(default=None)
    s: np.ndarray = field(default=None)
    Psi: np.ndarray = field(default=None)
    k: int = 0
    n_reorth: int = 0

    def __post_init__(self):
        if self.mode not in ("qr", "svd"):
            raise ValueError(f"unknown basis mode {self.mode!r}")
        if self.r_max is not None and self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if self.saturation not in ("reinit", "drop_oldest"):
            raise ValueError(f"unknown saturation policy {self.saturation!r}")
        if self.Phi is None:
            self.clear()

    @property
    def rank(self) -> int:
        return self.Phi.shape[1]

    @property
    def full(self) -> bool:
        return self.r_max is not None and self.rank >= self.r_max

    def clear(self):
        self.Phi = np.zeros((self.n, 0))
        self.s = np.zeros(0)
        self.Psi = np.zeros((0, 0))

    def orthogonality_error(self) -> float:
        if self.rank == 0:
            return 0.0
        return float(np.max(np.abs(self.Phi.T @ self.Phi - np.eye(self.rank))))

    def update(self, c: np.ndarray) -> "BasisState":
        if self.mode == "qr":
            return qr_update(self, c)
        return svd_update(self, c)


def _gram_schmidt(Phi, c):
    # two classical passes ("twice is enough") keep Phi orthonormal to round-off
    j = c - Phi @ (Phi.T @ c)
    return j - Phi @ (Phi.T @ j)


def qr_update(state: BasisState, c: np.ndarray) -> BasisState:
    """Incremental QR: append the normalised new direction of ``c``.

    When the basis is full its oldest (first) column is discarded before the
    Gram-Schmidt step. Directions with norm ``<= tol`` are ignored.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (state.n,):
        raise ValueError(f"snapshot has shape {c.shape}, expected ({state.n},)")
    if state.rank == 0:
        nc = np.linalg.norm(c)
        if nc == 0.0:
            logger.warning("zero snapshot ignored by an empty QR basis")
            return state
        state.Phi = (c / nc)[:, None]
        state.k += 1
        return state
    if state.full:
        state.Phi = state.Phi[:, 1:]
    j = _gram_schmidt(state.Phi, c)
    nj = np.linalg.norm(j)
    if nj > state.tol:
        state.Phi = np.column_stack([state.Phi, j / nj])
    state.k += 1
    return state


def svd_init(c: np.ndarray, tol_svd: float, state: BasisState | None = None) -> BasisState:
    """(Re-)initialise an incremental SVD from one snapshot.

    Snapshots with ``||c|| <= tol_svd`` produce an empty basis.
    """
    c = np.asarray(c, dtype=float)
    if state is None:
        state = BasisState(n=c.shape[0], mode="svd", r_max=None, tol=tol_svd)
    nc = np.linalg.norm(c)
    if nc > tol_svd:
        state.s = np.array([nc])
        state.Phi = (c / nc)[:, None]
        state.Psi = np.ones((1, 1))
    else:
        state.clear()
    state.k += 1
    return state


def svd_update(state: BasisState, c: np.ndarray) -> BasisState:
    """Rank-one update of the thin SVD ``Phi diag(s) Psi^T`` by column ``c``."""
    c = np.asarray(c, dtype=float)
    if c.shape != (state.n,):
        raise ValueError(f"snapshot has shape {c.shape}, expected ({state.n},)")
    r = state.rank
    if r == 0 or (state.full and state.saturation == "reinit"):
        return svd_init(c, state.tol, state)
    if state.full:
        _drop_weakest(state)
        r = state.rank

    Phi, s, Psi = state.Phi, state.s, state.Psi
    ell = Phi.T @ c
    cc = float(c @ c)
    p2 = cc - float(ell @ ell)
    p = np.sqrt(p2) if p2 > 0.0 else 0.0
    dependent = p < state.tol or p2 < 1e-12 * cc
    Q = np.zeros((r + 1, r + 1))
    Q[:r, :r] = np.diag(s)
    Q[:r, r] = ell
    if not dependent:
        Q[r, r] = p
    U, sig, V = dense_svd(Q)

    Psi_ext = np.zeros((Psi.shape[0] + 1, r + 1))
    Psi_ext[:-1, :r] = Psi
    Psi_ext[-1, r] = 1.0
    if dependent:
        state.Phi = Phi @ U[:r, :r]
        state.s = sig[:r]
        state.Psi = Psi_ext @ V[:, :r]
    else:
        j = (c - Phi @ ell) / p
        state.Phi = np.column_stack([Phi, j]) @ U
        state.s = sig
        state.Psi = Psi_ext @ V
    state.k += 1

    # cheap first/last column check, backed by a full check (r is small)
    check = min(state.tol, np.finfo(float).eps * state.n)
    first_last = abs(float(state.Phi[:, 0] @ state.Phi[:, -1])) if state.rank > 1 else 0.0
    if first_last > check or state.orthogonality_error() > ORTHO_TOL:
        state.Phi, _, _ = thin_qr(state.Phi)
        state.n_reorth += 1
    return state


def _drop_weakest(state: BasisState):
    # drop_oldest policy for a full SVD basis: remove the least dominant mode
    state.Phi = state.Phi[:, :-1]
    state.s = state.s[:-1]
    state.Psi = state.Psi[:, :-1]


def pod_batch(snapshots: np.ndarray, r: int | None = None, rtol: float = 1e-12) -> np.ndarray:
    """Leading ``r`` left singular vectors of the snapshot matrix (columns)."""
    S = np.asarray(snapshots, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[1] == 0:
        raise ValueError("no snapshots")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    r = rank if r is None else min(r, rank)
    return U[:, :r]


_MAGIC = b"RBAS"
_MODES = {"qr": 0, "svd": 1}


def dump_basis(state: BasisState, path) -> None:
    """Binary container: magic, (n, r, mode) as int64, then ``Phi`` and ``s``
    as column-major float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", state.n, state.rank, _MODES[state.mode]))
        fh.write(np.asfortranarray(state.Phi).tobytes(order="F"))
        fh.write(np.asarray(state.s, dtype="<f8").tobytes())


def load_basis(path, **kwargs) -> BasisState:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a basis file")
        n, r, mode = struct.unpack("<qqq", fh.read(24))
        Phi = np.frombuffer(fh.read(8 * n * r), dtype="<f8").reshape((n, r), order="F")
        s = np.frombuffer(fh.read(), dtype="<f8")
    mode_name = {v: k for k, v in _MODES.items()}[mode]
    state = BasisState(n=n, mode=mode_name, **kwargs)
    state.Phi = Phi.copy()
    state.s = s.copy()
    state.Psi = np.eye(len(s)) if len(s) else np.zeros((0, 0))
    return state
