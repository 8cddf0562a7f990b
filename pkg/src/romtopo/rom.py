"""Galerkin-projection ROM solve and its KKT-relative acceptance test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class RomUnavailable(RuntimeError):
    """No usable reduced model (empty basis or indefinite reduced operator)."""


@dataclass(frozen=True)
class RomConfig:
    kappa_rom: float = 1e-2
    x_ref: str = "zero"  # or "previous"

    def __post_init__(self):
        if not 0.0 < self.kappa_rom < 1.0:
            raise ValueError("kappa_rom must be in (0, 1)")
        if self.x_ref not in ("zero", "previous"):
            raise ValueError(f"unknown x_ref policy {self.x_ref!r}")


def reduced_operator(A, Phi):
    AP = np.column_stack([A @ Phi[:, i] for i in range(Phi.shape[1])])
    G = Phi.T @ AP
    return 0.5 * (G + G.T), AP


def rom_solve(A, b, Phi, x_ref=None):
    """Solve ``(Phi^T A Phi) xhat = Phi^T (b - A x_ref)``.

    Returns ``(x_tilde, xhat)`` with ``x_tilde = x_ref + Phi xhat``, the
    A-norm best approximation of the solution in ``x_ref + range(Phi)``.
    """
    if Phi is None or Phi.shape[1] == 0:
        raise RomUnavailable("empty basis")
    G, _ = reduced_operator(A, Phi)
    rhs = b if x_ref is None else b - A @ x_ref
    try:
        cho = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise RomUnavailable("reduced operator is not positive definite") from exc
    xhat = scipy.linalg.cho_solve(cho, Phi.T @ rhs)
    x = Phi @ xhat
    if x_ref is not None:
        x = x + x_ref
    return x, xhat


def rom_residual_norm(A, b, x_tilde) -> float:
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return 0.0
    return float(np.linalg.norm(b - A @ x_tilde) / nb)


def rom_threshold(kappa_rom: float, r_kkt: float) -> float:
    if r_kkt < 0:
        raise ValueError("r_kkt must be >= 0")
    return kappa_rom * r_kkt
