"""Preconditioned CG and ROM-recycling (deflated) PCG."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

REFRESH_EVERY = 50


class PcgError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class NotPositiveDefinite(PcgError):
    pass


class NotConverged(PcgError):
    pass


@dataclass(frozen=True)
class ThresholdOption1:
    kappa_pcg: float
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 < self.kappa_pcg < 1.0:
            raise ValueError("kappa_pcg must be in (0, 1)")
        if not 0.0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")


@dataclass(frozen=True)
class ThresholdOption2:
    kappa_pcg: float
    kappa_cut: float
    eps_user: float

    def __post_init__(self):
        if not 0.0 < self.kappa_pcg < 1.0:
            raise ValueError("kappa_pcg must be in (0, 1)")
        if self.kappa_cut <= 0 or self.eps_user <= 0:
            raise ValueError("kappa_cut and eps_user must be positive")


def pcg_threshold(option, r_kkt: float) -> float:
    """KKT-adaptive relative PCG tolerance.

    Option 1 clamps ``kappa_pcg * r_kkt`` into ``[lower, upper]``. Option 2
    relaxes the tolerance only while ``r_kkt`` is above the cut value and
    never goes below the user tolerance.
    """
    if r_kkt < 0:
        raise ValueError("r_kkt must be >= 0")
    if isinstance(option, ThresholdOption1):
        return min(max(option.kappa_pcg * r_kkt, option.lower), option.upper)
    if r_kkt > option.kappa_cut:
        return max(option.kappa_pcg * r_kkt, option.eps_user)
    return option.eps_user


@dataclass
class PcgSettings:
    eps_pcg: float = 1e-4
    tol_abs: float = 1e-30
    maxit: int = 10000

    def __post_init__(self):
        if not self.eps_pcg > 0 and not self.tol_abs > 0:
            raise ValueError("need eps_pcg > 0 or tol_abs > 0")
        if self.maxit < 0:
            raise ValueError("maxit must be >= 0")


@dataclass
class PcgReport:
    x: np.ndarray
    iters: int
    converged: bool
    residual: float  # final r^T M^-1 r (or the deflated analogue at j = 0)
    threshold: float  # the r0 of the stopping rule
    recycled: bool = False


class _Deflation:
    """A-orthogonal projection against ``range(Phi)``.

    ``Phi^T A Phi`` is Cholesky-factored once; each application costs one
    small triangular solve pair and two tall-skinny products.
    """

    def __init__(self, A, Phi):
        self.Phi = Phi
        self.APhi = np.column_stack([A @ Phi[:, i] for i in range(Phi.shape[1])])
        G = Phi.T @ self.APhi
        G = 0.5 * (G + G.T)
        try:
            self.cho = scipy.linalg.cho_factor(G)
        except np.linalg.LinAlgError:
            logger.warning("recycle space operator is singular; deflation disabled")
            self.cho = None

    def __call__(self, p):
        if self.cho is None:
            return p
        # Phi^T A p = (A Phi)^T p since A is symmetric
        y = scipy.linalg.cho_solve(self.cho, self.APhi.T @ p)
        return p - self.Phi @ y


def recycling_pcg(A, b, x0, settings: PcgSettings, M, Phi=None, monitor=None) -> PcgReport:
    """PCG with optional deflation of search directions against ``range(Phi)``.

    With ``Phi`` empty or ``None`` this is plain PCG. ``M`` applies the
    preconditioner inverse. Stopping rule: ``r^T M^-1 r <= r0`` with
    ``r0 = max(eps^2 b^T M^-1 b, tol_abs^2)``. ``monitor(j, p, Ap)`` is called
    for every search direction, mainly for testing.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.array(x0, dtype=float, copy=True) if x0 is not None else np.zeros(n)
    deflate = None
    if Phi is not None and Phi.shape[1] > 0:
        deflate = _Deflation(A, Phi)
    recycled = deflate is not None

    r = b - A @ x
    p = M(r)
    if deflate is not None:
        p = deflate(p)
    r0 = max(settings.eps_pcg ** 2 * float(b @ M(b)), settings.tol_abs ** 2)
    zeta = float(r @ p)
    if zeta <= r0:
        return PcgReport(x, 0, True, zeta, r0, recycled)
    Ap = A @ p
    gamma = float(Ap @ p)
    if gamma == 0.0:
        raise PcgError("zero curvature on the initial direction",
                       PcgReport(x, 0, False, zeta, r0, recycled))
    if monitor is not None:
        monitor(0, p, Ap)
    eta = zeta
    for j in range(1, settings.maxit + 1):
        alpha = zeta / gamma
        x += alpha * p
        if j % REFRESH_EVERY == 0:
            r = b - A @ x
        else:
            r -= alpha * Ap
        z = M(r)
        eta = float(r @ z)
        if eta < r0:
            return PcgReport(x, j, True, eta, r0, recycled)
        beta = eta / zeta
        p = z + beta * p
        if deflate is not None:
            p = deflate(p)
        Ap = A @ p
        gamma = float(p @ Ap)
        if gamma <= 0.0:
            raise NotPositiveDefinite(f"non-positive curvature {gamma:g} at iteration {j}",
                                      PcgReport(x, j, False, eta, r0, recycled))
        if monitor is not None:
            monitor(j, p, Ap)
        zeta = eta
    rep = PcgReport(x, settings.maxit, False, eta, r0, recycled)
    raise NotConverged(f"PCG did not converge in {settings.maxit} iterations "
                       f"(r^T M^-1 r = {eta:.3e} > {r0:.3e})", rep)


def pcg(A, b, x0, settings: PcgSettings, M) -> PcgReport:
    return recycling_pcg(A, b, x0, settings, M, None)
