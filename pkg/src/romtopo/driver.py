"""ROM-accelerated linear solves and the outer design loop.

Every state and adjoint solve of an optimisation run goes through
:meth:`Accelerator.solve`. In the ROM modes a solve first tries the Galerkin
ROM on the stream's basis; if the ROM residual is not below
``kappa_rom * r_kkt`` it falls back to recycling PCG started from the ROM
solution, and the PCG solution becomes a new snapshot.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import fem
from .basis import BasisState
from .config import RunConfig
from .krylov import (PcgError, PcgSettings, ThresholdOption1, ThresholdOption2,
                     pcg_threshold, recycling_pcg)
from .numerics import build_preconditioner
from .optimizer import InteriorPoint, IpmSettings
from .rom import RomConfig, RomUnavailable, rom_residual_norm, rom_solve, rom_threshold

logger = logging.getLogger(__name__)

TELEMETRY_FIELDS = ("solve_id", "iteration", "kind", "case", "mode", "iters", "eps_pcg",
                    "eps_rom", "r_kkt", "r_rom", "rel_residual", "rank", "seconds")


@dataclass
class SolveRecord:
    solve_id: int
    iteration: int
    kind: str
    case: int
    mode: str  # rom-accepted, recycled-pcg or plain-pcg
    iters: int
    eps_pcg: float
    eps_rom: float
    r_kkt: float
    r_rom: float
    rel_residual: float
    rank: int
    seconds: float

    def row(self):
        return [getattr(self, k) for k in TELEMETRY_FIELDS]


@dataclass
class SolveContext:
    """Per-stream solver state: basis, thresholds and the current KKT norm."""

    stream: tuple
    mode: str
    rom: RomConfig
    pcg: PcgSettings
    threshold: object
    basis: BasisState | None = None
    r_kkt: float = 1.0
    previous: np.ndarray | None = None
    preconditioner: str = "jacobi"
    basis_updates: int = 0


class Accelerator:
    """Owns one :class:`SolveContext` per (kind, case) stream.

    ``mode`` is ``"default"`` (plain PCG from zero at ``eps_pcg``),
    ``"rom-qr"`` or ``"rom-svd"``.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.mode = cfg.mode
        self.contexts: dict[tuple, SolveContext] = {}
        self.records: list[SolveRecord] = []
        self.r_kkt = 1.0
        self.iteration = 0
        self.kappa_scale = 1.0
        self.refinements = 0
        self._set_threshold()

    def _set_threshold(self):
        cfg, k = self.cfg, self.kappa_scale
        if cfg.pcg_option == 1:
            self.threshold = ThresholdOption1(cfg.kappa_pcg * k, cfg.pcg_lower, cfg.pcg_upper)
        else:
            self.threshold = ThresholdOption2(cfg.kappa_pcg * k, cfg.kappa_cut, cfg.eps_pcg)
        for ctx in self.contexts.values():
            ctx.threshold = self.threshold
            ctx.rom = RomConfig(cfg.kappa_rom * k, cfg.x_ref)

    def refine(self) -> bool:
        """Cut ``kappa_rom`` and ``kappa_pcg`` by 10 (up to ``refine_max`` times).

        Called by the optimizer after a failed line search, which with inexact
        solves usually means the function values are too noisy for the merit
        decrease being asked for. Default mode has nothing to tighten.
        """
        if self.mode == "default" or self.refinements >= self.cfg.refine_max:
            return False
        self.refinements += 1
        self.kappa_scale *= 0.1
        self._set_threshold()
        logger.info("solve thresholds tightened to %g x kappa", self.kappa_scale)
        return True

    def context(self, kind: str, case: int, n: int) -> SolveContext:
        key = (kind, case)
        ctx = self.contexts.get(key)
        if ctx is None:
            cfg = self.cfg
            basis = None
            if self.mode != "default":
                bmode = "qr" if self.mode == "rom-qr" else "svd"
                basis = BasisState(n=n, mode=bmode, r_max=cfg.r_max,
                                   tol=cfg.tol_qr if bmode == "qr" else cfg.tol_svd,
                                   saturation=cfg.svd_saturation)
            ctx = SolveContext(key, self.mode, RomConfig(cfg.kappa_rom * self.kappa_scale, cfg.x_ref),
                               PcgSettings(cfg.eps_pcg, cfg.tol_abs, cfg.pcg_maxit),
                               self.threshold, basis, preconditioner=cfg.preconditioner)
            self.contexts[key] = ctx
        ctx.r_kkt = self.r_kkt
        return ctx

    def __call__(self, kind, case, A, b):
        x, _ = self.solve(self.context(kind, case, A.shape[0]), A, b)
        return x

    def solve(self, ctx: SolveContext, A, b):
        t0 = time.perf_counter()
        n = A.shape[0]
        kind, case = ctx.stream
        # thresholds never get looser than at the initial r_kkt = 1
        r_kkt = min(ctx.r_kkt, self.cfg.r_kkt_cap)
        eps_rom = float("nan")
        r_rom = float("nan")
        if not np.any(b):
            x = np.zeros(n)
            rec = self._record(ctx, "plain-pcg", 0, 0.0, eps_rom, r_rom, 0.0, t0)
            return x, rec

        M = build_preconditioner(A, ctx.preconditioner)
        if ctx.mode == "default":
            settings = ctx.pcg
            rep = self._pcg(A, b, np.zeros(n), settings, M, None)
            rel = float(np.linalg.norm(b - A @ rep.x) / np.linalg.norm(b))
            rec = self._record(ctx, "plain-pcg", rep.iters, settings.eps_pcg, eps_rom, r_rom, rel, t0)
            return rep.x, rec

        eps_rom = rom_threshold(ctx.rom.kappa_rom, r_kkt)
        eps_pcg = pcg_threshold(ctx.threshold, r_kkt)
        x_ref = ctx.previous if ctx.rom.x_ref == "previous" else None
        Phi = ctx.basis.Phi
        x0 = np.zeros(n) if x_ref is None else x_ref.copy()
        if ctx.basis.rank > 0:
            try:
                x_tilde, _ = rom_solve(A, b, Phi, x_ref)
                r_rom = rom_residual_norm(A, b, x_tilde)
                x0 = x_tilde
                if r_rom < eps_rom:
                    ctx.previous = x_tilde
                    rec = self._record(ctx, "rom-accepted", 0, eps_pcg, eps_rom, r_rom, r_rom, t0)
                    return x_tilde, rec
            except RomUnavailable as exc:
                logger.info("ROM unavailable for %s: %s", ctx.stream, exc)
        settings = PcgSettings(eps_pcg, ctx.pcg.tol_abs, ctx.pcg.maxit)
        rep = self._pcg(A, b, x0, settings, M, Phi if Phi.shape[1] else None)
        ctx.basis.update(rep.x)
        ctx.basis_updates += 1
        ctx.previous = rep.x
        rel = float(np.linalg.norm(b - A @ rep.x) / np.linalg.norm(b))
        rec = self._record(ctx, "recycled-pcg", rep.iters, eps_pcg, eps_rom, r_rom, rel, t0)
        return rep.x, rec

    def _pcg(self, A, b, x0, settings, M, Phi):
        try:
            return recycling_pcg(A, b, x0, settings, M, Phi)
        except PcgError as exc:
            logger.error("linear solve failed: %s", exc)
            raise

    def _record(self, ctx, mode, iters, eps_pcg, eps_rom, r_rom, rel, t0) -> SolveRecord:
        rank = ctx.basis.rank if ctx.basis is not None else 0
        rec = SolveRecord(len(self.records), self.iteration, ctx.stream[0], ctx.stream[1], mode,
                          int(iters), float(eps_pcg), float(eps_rom), float(ctx.r_kkt),
                          float(r_rom), float(rel), rank, time.perf_counter() - t0)
        self.records.append(rec)
        return rec


def accelerated_solve(ctx: SolveContext, A, b, accelerator: Accelerator | None = None):
    """Solve ``A x = b`` for one stream; returns ``(x, SolveRecord)``."""
    acc = accelerator or Accelerator(RunConfig(mode=ctx.mode))
    return acc.solve(ctx, A, b)


@dataclass
class RunResult:
    config: RunConfig
    x: np.ndarray
    rho: np.ndarray
    objective: float
    constraints: np.ndarray
    r_kkt: float
    converged: bool
    iterations: int
    message: str
    records: list = field(default_factory=list)
    history: list = field(default_factory=list)
    stress: np.ndarray | None = None
    wall_time: float = 0.0
    mesh: object = None
    refinements: int = 0

    @property
    def total_iters(self) -> int:
        return sum(r.iters for r in self.records)

    @property
    def n_solves(self) -> int:
        return len(self.records)

    @property
    def avg_iters(self) -> float:
        return self.total_iters / self.n_solves if self.records else 0.0

    @property
    def solve_time(self) -> float:
        return sum(r.seconds for r in self.records)

    def mode_counts(self) -> dict:
        out = {"rom-accepted": 0, "recycled-pcg": 0, "plain-pcg": 0}
        for r in self.records:
            out[r.mode] += 1
        return out


def run_optimization(problem, cfg: RunConfig) -> RunResult:
    """Run the interior-point design loop with accelerated linear solves."""
    t0 = time.perf_counter()
    acc = Accelerator(cfg)
    x0 = np.full(problem.n_design, cfg.x_init)
    if problem.objective == "compliance":
        # normalise compliance by its value at the initial design; this setup
        # solve is direct and not part of the solve telemetry
        rho0 = problem.filtered(x0)
        K0 = problem.assembler.assemble(rho0)
        c0 = np.mean([float(b @ spla.spsolve(K0.tocsc(), b)) for b in problem.loads])
        problem.objective_scale = 1.0 / c0
    else:
        # mass is reported as a volume fraction; for the optimizer it is
        # counted in units of the largest element so its gradient is O(1)
        # and the unscaled KKT norm is not trivially small on fine meshes
        problem.objective_scale = problem.total_volume / float(problem.mesh.volumes.max())

    def evaluate(x, gradients):
        return problem.evaluate(x, acc, gradients=gradients)

    def complete(ev):
        return problem.gradients(ev, acc)

    def on_kkt(r):
        acc.r_kkt = r

    def on_iteration(info):
        acc.iteration = info["iter"] + 1

    settings = IpmSettings(eps_tol=cfg.eps_tol, max_iter=cfg.max_iter, omega0=cfg.omega0,
                           hessian=cfg.hessian)
    ipm = InteriorPoint(evaluate, complete, problem.n_design, problem.n_constraints,
                        settings, r_kkt_hook=on_kkt, iteration_hook=on_iteration,
                        refine_hook=acc.refine)
    message = ""
    try:
        res = ipm.minimize(x0)
    except PcgError as exc:
        message = f"linear solver failure: {exc}"
        logger.error(message)
        return RunResult(cfg, x0, problem.filtered(x0), float("nan"), np.full(problem.n_constraints, np.nan),
                         float("nan"), False, acc.iteration, message, acc.records, ipm.history,
                         wall_time=time.perf_counter() - t0, mesh=problem.mesh, refinements=acc.refinements)
    ev = res.evaluation
    stress = ev.stress
    if stress is None and ev.u:
        stress = fem.relaxed_von_mises(problem.mesh, ev.u[0], ev.rho, problem.material)
    return RunResult(
        config=cfg, x=res.state.x.copy(), rho=ev.rho.copy(),
        objective=float(ev.f / problem.objective_scale), constraints=np.asarray(ev.g).copy(),
        r_kkt=float(res.r_kkt), converged=res.converged, iterations=res.iterations,
        message=res.message, records=acc.records, history=res.history, stress=stress,
        wall_time=time.perf_counter() - t0, mesh=problem.mesh, refinements=acc.refinements)
