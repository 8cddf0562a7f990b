"""Sparse and small dense linear-algebra kernels.

Sparse operators are plain ``scipy.sparse.csr_matrix`` objects with sorted
column indices and full (not half) symmetric storage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

logger = logging.getLogger(__name__)


class NotSpdError(ValueError):
    """Raised when an operator violates the SPD contract."""


def as_spd_csr(A, check_values: bool = False) -> sp.csr_matrix:
    """Convert ``A`` to canonical CSR and validate the SPD storage invariants.

    Checks structural symmetry, positive diagonal and sorted indices. With
    ``check_values`` the numerical symmetry is checked as well.
    """
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    n, m = A.shape
    if n != m or n < 1:
        raise NotSpdError(f"operator must be square and non-empty, got {A.shape}")
    if np.any(A.diagonal() <= 0.0):
        raise NotSpdError("non-positive diagonal entry")
    pattern = A.copy()
    pattern.data = np.ones_like(pattern.data)
    if (pattern != pattern.T).nnz:
        raise NotSpdError("operator is not structurally symmetric")
    if check_values:
        scale = abs(A).max()
        if abs(A - A.T).max() > 1e-14 * scale:
            raise NotSpdError("operator is not symmetric")
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has shape {x.shape}")
    return A @ x


@dataclass
class Preconditioner:
    """Application of an SPD approximation of ``A^-1``.

    ``kind`` is ``"jacobi"`` or ``"ic0"``. For IC0 ``factor`` holds the lower
    triangular incomplete Cholesky factor ``L`` with ``A ~= L L^T``.
    """

    kind: str
    inv_diag: np.ndarray | None = None
    factor: sp.csr_matrix | None = None
    fell_back: bool = False

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "jacobi":
            return self.inv_diag * r
        y = spsolve_triangular(self.factor, r, lower=True)
        return spsolve_triangular(self._factor_t, y, lower=False)

    def __post_init__(self):
        if self.factor is not None:
            self._factor_t = self.factor.T.tocsr()


def _ic0_factor(A: sp.csr_matrix) -> sp.csr_matrix:
    """Incomplete Cholesky with zero fill-in on the lower pattern of ``A``."""
    L = sp.tril(A, format="csr")
    L.sort_indices()
    n = L.shape[0]
    indptr, indices, data = L.indptr, L.indices, L.data.copy()
    # column -> position lookup per row for the pattern intersection
    rows = [dict(zip(indices[indptr[i]:indptr[i + 1]].tolist(),
                     range(indptr[i], indptr[i + 1]))) for i in range(n)]
    diag_pos = np.array([rows[i][i] for i in range(n)])
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        row_i = rows[i]
        for pos in range(start, stop):
            j = indices[pos]
            s = data[pos]
            # subtract sum_k<j L[i,k] L[j,k] over the shared pattern
            row_j = rows[j]
            for k, pk in row_i.items():
                if k < j:
                    pjk = row_j.get(k)
                    if pjk is not None:
                        s -= data[pk] * data[pjk]
            if j < i:
                data[pos] = s / data[diag_pos[j]]
            else:
                if s <= 0.0:
                    raise NotSpdError(f"non-positive pivot {s:g} at row {i}")
                data[pos] = np.sqrt(s)
    return sp.csr_matrix((data, indices, indptr), shape=L.shape)


def build_preconditioner(A: sp.csr_matrix, kind: str = "jacobi") -> Preconditioner:
    """Build a Jacobi or IC(0) preconditioner.

    A breakdown of IC(0) (zero or negative pivot) falls back to Jacobi and
    sets ``fell_back`` on the result.
    """
    kind = kind.lower()
    if kind not in ("jacobi", "ic0"):
        raise ValueError(f"unknown preconditioner kind {kind!r}")
    if kind == "ic0":
        try:
            return Preconditioner("ic0", factor=_ic0_factor(A))
        except NotSpdError as exc:
            logger.warning("IC(0) breakdown (%s); falling back to Jacobi", exc)
            P = Preconditioner("jacobi", inv_diag=1.0 / A.diagonal())
            P.fell_back = True
            return P
    return Preconditioner("jacobi", inv_diag=1.0 / A.diagonal())


def dense_svd(Q: np.ndarray):
    """SVD of a small dense matrix, ``Q = U @ diag(s) @ V.T``.

    Singular values are returned in descending order. LAPACK failures to
    converge propagate as ``numpy.linalg.LinAlgError``.
    """
    Q = np.asarray(Q, dtype=float)
    U, s, Vt = np.linalg.svd(Q, full_matrices=True)
    return U, s, Vt.T


def thin_qr(B: np.ndarray, tol: float = 1e-12):
    """Thin Householder QR of a tall matrix.

    Signs are fixed so that ``diag(R) >= 0``; an orthonormal input is then
    reproduced exactly up to round-off. Returns ``(Q, R, deficient)`` where
    ``deficient`` flags columns with ``|R[i, i]| < tol * max|R[i, i]|``.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] < B.shape[1]:
        raise ValueError(f"thin_qr needs rows >= cols, got {B.shape}")
    Q, R = scipy.linalg.qr(B, mode="economic")
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    Q = Q * signs
    R = signs[:, None] * R
    d = np.abs(np.diag(R))
    ref = d.max() if d.size else 0.0
    deficient = d < tol * max(ref, np.finfo(float).tiny)
    return Q, R, deficient
