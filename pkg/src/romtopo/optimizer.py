"""A small primal-dual interior-point method for box- and inequality-
constrained design problems.

The problem ``min f(x) s.t. g(x) <= 0, 0 <= x <= 1`` is handled in the
stacked form ``y = [x, q, w]`` with slacks ``q = -g(x)`` and ``w = 1 - x``.
The upper-bound rows ``x + w = 1`` are kept satisfied exactly, so their
multipliers coincide with the duals of ``w`` and are eliminated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

S_MAX = 100.0


class OptimizerAbort(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class IpmSettings:
    eps_tol: float = 1e-6
    max_iter: int = 1000
    omega0: float = 0.1
    tau_min: float = 0.995
    kappa_eps: float = 10.0  # inner barrier tolerance factor
    hessian: str = "lbfgs"  # or "bb"
    lbfgs_memory: int = 6
    max_backtracks: int = 10
    armijo: float = 1e-4
    slack_push: float = 1e-2
    x_init: float | np.ndarray | None = None

    def __post_init__(self):
        if self.hessian not in ("lbfgs", "bb"):
            raise ValueError(f"unknown Hessian approximation {self.hessian!r}")
        if self.eps_tol <= 0 or self.omega0 <= 0:
            raise ValueError("eps_tol and omega0 must be positive")


@dataclass
class IpmState:
    x: np.ndarray
    q: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    z_slack: np.ndarray
    lam: np.ndarray
    omega: float
    iteration: int = 0

    @property
    def w(self) -> np.ndarray:
        return 1.0 - self.x

    @property
    def y(self) -> np.ndarray:
        """Stacked primal vector ``[x, q, w]`` of length ``2 N_d + m + 1``."""
        return np.concatenate([self.x, self.q, self.w])

    @property
    def z(self) -> np.ndarray:
        """Bound duals aligned with ``y``."""
        return np.concatenate([self.z_lower, self.z_slack, self.z_upper])

    def copy(self) -> "IpmState":
        return IpmState(self.x.copy(), self.q.copy(), self.z_lower.copy(), self.z_upper.copy(),
                        self.z_slack.copy(), self.lam.copy(), self.omega, self.iteration)


@dataclass
class GeneralForm:
    """Equality/bound form of one problem evaluation.

    ``c(y) = g(x) + q`` holds the inequality rows; the bound rows
    ``x + w - 1`` vanish identically by construction of ``w``.
    """

    f: float
    g: np.ndarray
    grad_f: np.ndarray
    jac_g: np.ndarray  # (m + 1, N_d)

    def c(self, state: IpmState) -> np.ndarray:
        return self.g + state.q

    def jac_t_vec(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(grad c)^T lam`` split into the x block and the q block."""
        return self.jac_g.T @ lam, lam.copy()


def to_general_form(ev) -> GeneralForm:
    return GeneralForm(ev.f, np.asarray(ev.g, dtype=float), np.asarray(ev.df_dx, dtype=float),
                       np.atleast_2d(np.asarray(ev.dg_dx, dtype=float)))


def stacked_size(n_design: int, n_constraints: int) -> int:
    return 2 * n_design + n_constraints


@dataclass
class KktParts:
    stationarity: float
    feasibility: float
    complementarity: float
    s_d: float
    s_c: float

    @property
    def value(self) -> float:
        return max(self.stationarity / self.s_d, self.feasibility, self.complementarity / self.s_c)


def kkt_parts(state: IpmState, gf: GeneralForm, omega: float = 0.0) -> KktParts:
    """Components of the scaled KKT error.

    With ``omega = 0`` this is the optimality measure of the original
    problem; with ``omega > 0`` the complementarity block is ``XZe - omega e``
    (the barrier subproblem).
    """
    jx, jq = gf.jac_t_vec(state.lam)
    st_x = gf.grad_f + jx - state.z_lower + state.z_upper
    st_q = jq - state.z_slack
    stat = max(np.max(np.abs(st_x)), np.max(np.abs(st_q)) if st_q.size else 0.0)
    feas = float(np.max(np.abs(gf.c(state)))) if gf.g.size else 0.0
    y, z = state.y, state.z
    comp = float(np.max(np.abs(y * z - omega)))
    n_y = y.size
    m = max(gf.g.size - 1, 0)
    s_d = max(S_MAX, (np.sum(np.abs(state.lam)) + np.sum(np.abs(z))) / (m + n_y)) / S_MAX
    s_c = max(S_MAX, np.sum(np.abs(z)) / n_y) / S_MAX
    return KktParts(float(stat), feas, comp, float(s_d), float(s_c))


def kkt_norm(state: IpmState, gf: GeneralForm) -> float:
    return kkt_parts(state, gf, 0.0).value


def update_omega(omega: float, eps_tol: float) -> float:
    return max(eps_tol / 10.0, min(0.2 * omega, omega ** 1.5))


class _Hessian:
    """Positive-definite approximation ``B`` of the Lagrangian Hessian on x.

    ``lbfgs``: compact limited-memory BFGS. ``bb``: Barzilai-Borwein scaled
    identity. ``solve_shifted(sigma, R)`` applies ``(B + diag(sigma))^-1``.
    """

    def __init__(self, kind: str, memory: int, n: int):
        self.kind = kind
        self.memory = memory
        self.n = n
        self.S: list[np.ndarray] = []
        self.Y: list[np.ndarray] = []
        self.delta = 1.0

    def update(self, s: np.ndarray, y: np.ndarray):
        sy = float(s @ y)
        if sy <= 1e-10 * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0.0:
            return False
        if self.kind == "bb":
            self.delta = float(np.clip(sy / (s @ s), 1e-8, 1e8))
            return True
        self.S.append(s.copy())
        self.Y.append(y.copy())
        if len(self.S) > self.memory:
            self.S.pop(0)
            self.Y.pop(0)
        self.delta = float(np.clip((y @ y) / sy, 1e-8, 1e8))
        return True

    def reset(self):
        self.S.clear()
        self.Y.clear()

    def solve_shifted(self, sigma: np.ndarray, R: np.ndarray) -> np.ndarray:
        Ginv = 1.0 / (self.delta + sigma)
        if self.kind == "bb" or not self.S:
            return Ginv[:, None] * R if R.ndim == 2 else Ginv * R
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        L = np.tril(SY, -1)
        Dg = np.diag(np.diag(SY))
        W = np.hstack([self.delta * S, Y])
        N = np.block([[self.delta * (S.T @ S), L], [L.T, -Dg]])
        GW = Ginv[:, None] * W
        inner = N - W.T @ GW
        vec = R.ndim == 1
        R2 = R[:, None] if vec else R
        GR = Ginv[:, None] * R2
        out = GR + GW @ np.linalg.solve(inner, W.T @ GR)
        return out[:, 0] if vec else out


@dataclass
class IpmResult:
    state: IpmState
    evaluation: object
    r_kkt: float
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    message: str = ""


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


class InteriorPoint:
    """Primal-dual barrier method with a quasi-Newton Hessian on x.

    ``evaluate(x, gradients)`` returns an object with ``f``, ``g``, ``df_dx``
    and ``dg_dx``; gradients may be filled later by ``complete(ev)``.
    ``r_kkt_hook(r)`` receives the KKT norm after every accepted iteration
    (the driver uses it to set solve tolerances for the next iteration).
    When a line search fails, ``refine_hook()`` may tighten the accuracy of
    the evaluations and return True; the point is then re-evaluated and the
    iteration retried instead of aborting.
    """

    def __init__(self, evaluate, complete, n_design: int, n_constraints: int,
                 settings: IpmSettings | None = None, r_kkt_hook=None, iteration_hook=None,
                 refine_hook=None):
        self.evaluate = evaluate
        self.complete = complete
        self.n = n_design
        self.m1 = n_constraints
        self.settings = settings or IpmSettings()
        self.r_kkt_hook = r_kkt_hook or (lambda r: None)
        self.iteration_hook = iteration_hook or (lambda info: None)
        self.refine_hook = refine_hook or (lambda: False)
        self.hess = _Hessian(self.settings.hessian, self.settings.lbfgs_memory, n_design)
        self.nu = 1e-6  # merit penalty
        self.history: list = []

    # -- helpers -----------------------------------------------------------

    def _initial_state(self, ev) -> IpmState:
        st = self.settings
        omega = st.omega0
        x = self._x0.copy()
        q = np.maximum(-ev.g, st.slack_push)
        z_lower = omega / x
        z_upper = omega / (1.0 - x)
        z_slack = omega / q
        lam = z_slack.copy()
        return IpmState(x, q, z_lower, z_upper, z_slack, lam, omega)

    def _merit(self, ev, x, q, omega):
        w = 1.0 - x
        barrier = np.sum(np.log(x)) + np.sum(np.log(w)) + np.sum(np.log(q))
        return ev.f - omega * barrier + self.nu * np.sum(np.abs(ev.g + q))

    def _direction(self, s: IpmState, gf: GeneralForm):
        om = s.omega
        x, w, q = s.x, s.w, s.q
        J = gf.jac_g
        r_x = gf.grad_f + J.T @ s.lam - om / x + om / w
        r_q = s.lam - om / q
        r_c = gf.g + q
        sig_x = s.z_lower / x + s.z_upper / w
        sig_q = s.z_slack / q
        Dinv_rx = self.hess.solve_shifted(sig_x, r_x)
        if self.m1:
            Dinv_Jt = self.hess.solve_shifted(sig_x, J.T.copy())
            S = J @ Dinv_Jt + np.diag(1.0 / sig_q)
            S = 0.5 * (S + S.T)
            rhs = r_c - r_q / sig_q - J @ Dinv_rx
            dlam = scipy.linalg.solve(S, rhs, assume_a="pos")
            dx = -(Dinv_rx + Dinv_Jt @ dlam)
            dq = -(r_q + dlam) / sig_q
        else:
            dlam = np.zeros(0)
            dx = -Dinv_rx
            dq = np.zeros(0)
        dzl = om / x - s.z_lower - s.z_lower / x * dx
        dzu = om / w - s.z_upper + s.z_upper / w * dx
        dzq = om / q - s.z_slack - s.z_slack / q * dq
        return dx, dq, dlam, dzl, dzu, dzq

    # -- main loop ---------------------------------------------------------

    def minimize(self, x0) -> IpmResult:
        st = self.settings
        self._x0 = np.clip(np.broadcast_to(np.asarray(x0, dtype=float), (self.n,)).copy(),
                           1e-3, 1 - 1e-3)
        ev = self.evaluate(self._x0, True)
        s = self._initial_state(ev)
        gf = to_general_form(ev)
        r_kkt = kkt_norm(s, gf)
        self.r_kkt_hook(r_kkt)
        self._record(s, ev, gf, r_kkt, 0.0)
        converged = r_kkt < st.eps_tol
        message = "converged" if converged else ""
        while not converged and s.iteration < st.max_iter:
            # barrier update (possibly several times if already satisfied)
            while (kkt_parts(s, gf, s.omega).value < st.kappa_eps * s.omega
                   and s.omega > st.eps_tol / 10.0 * 1.0000001):
                s.omega = update_omega(s.omega, st.eps_tol)
            try:
                s, ev, gf, alpha = self._step(s, ev, gf)
            except OptimizerAbort as exc:
                if self.refine_hook():
                    logger.info("line search failed; retrying with tighter evaluations")
                    ev = self.evaluate(s.x, True)
                    gf = to_general_form(ev)
                    self.hess.reset()
                    continue
                message = str(exc)
                logger.warning("interior point aborted: %s", exc)
                break
            r_kkt = kkt_norm(s, gf)
            self.r_kkt_hook(r_kkt)
            self._record(s, ev, gf, r_kkt, alpha)
            converged = r_kkt < st.eps_tol
        if converged:
            message = "converged"
        elif not message:
            message = "iteration limit reached"
        return IpmResult(s, ev, r_kkt, converged, s.iteration, self.history, message)

    def _record(self, s, ev, gf, r_kkt, alpha):
        info = dict(iter=s.iteration, f=float(ev.f), max_g=float(np.max(ev.g)) if ev.g.size else 0.0,
                    r_kkt=float(r_kkt), omega=float(s.omega), alpha=float(alpha))
        self.history.append(info)
        self.iteration_hook(info)

    def _step(self, s: IpmState, ev, gf: GeneralForm):
        st = self.settings
        om = s.omega
        tau = max(st.tau_min, 1.0 - om)
        dx, dq, dlam, dzl, dzu, dzq = self._direction(s, gf)
        a_p = min(_fraction_to_boundary(s.x, dx, tau), _fraction_to_boundary(s.w, -dx, tau),
                  _fraction_to_boundary(s.q, dq, tau) if dq.size else 1.0)
        a_d = min(_fraction_to_boundary(s.z_lower, dzl, tau),
                  _fraction_to_boundary(s.z_upper, dzu, tau),
                  _fraction_to_boundary(s.z_slack, dzq, tau) if dzq.size else 1.0)

        lam_plus = s.lam + dlam
        if lam_plus.size:
            need = float(np.max(np.abs(lam_plus))) + 1e-4
            if self.nu < need:
                self.nu = max(1.5 * self.nu, need)
        phi0 = self._merit(ev, s.x, s.q, om)
        c0 = gf.g + s.q
        dphi = (float((gf.grad_f - om / s.x + om / s.w) @ dx) - float(np.sum(om / s.q * dq))
                - self.nu * float(np.sum(np.abs(c0))))
        if dphi >= 0:
            # not a descent direction for the merit (inexact data); restart the
            # quasi-Newton memory and fall back to a scaled gradient step
            self.hess.reset()
            dx, dq, dlam, dzl, dzu, dzq = self._direction(s, gf)
            dphi = (float((gf.grad_f - om / s.x + om / s.w) @ dx)
                    - float(np.sum(om / s.q * dq)) - self.nu * float(np.sum(np.abs(c0))))
        alpha = a_p
        for _ in range(st.max_backtracks + 1):
            x_new = s.x + alpha * dx
            q_new = s.q + alpha * dq
            ev_new = self.evaluate(x_new, False)
            phi = self._merit(ev_new, x_new, q_new, om)
            if phi <= phi0 + st.armijo * alpha * dphi:
                break
            alpha *= 0.5
        else:
            raise OptimizerAbort(
                f"line search failed after {st.max_backtracks} backtracks at iteration "
                f"{s.iteration} (merit {phi0:.6e}, slope {dphi:.3e})", s)

        ev_new = self.complete(ev_new)
        gf_new = to_general_form(ev_new)
        new = s.copy()
        new.x = x_new
        new.q = q_new
        new.lam = s.lam + alpha * dlam
        ad = min(a_d, 1.0)
        new.z_lower = s.z_lower + ad * dzl
        new.z_upper = s.z_upper + ad * dzu
        new.z_slack = s.z_slack + ad * dzq
        # keep duals within a factor of the central path (safeguard)
        k_sig = 1e10
        for name, v in (("z_lower", new.x), ("z_upper", new.w), ("z_slack", new.q)):
            z = getattr(new, name)
            setattr(new, name, np.clip(z, om / (k_sig * v), k_sig * om / v))
        new.iteration = s.iteration + 1

        # quasi-Newton pair on the Lagrangian of f + lam^T g
        step = x_new - s.x
        ygrad = (gf_new.grad_f + gf_new.jac_g.T @ new.lam) - (gf.grad_f + gf.jac_g.T @ new.lam)
        self.hess.update(step, ygrad)
        return new, ev_new, gf_new, alpha
