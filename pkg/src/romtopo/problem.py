"""Objectives, constraints and adjoint sensitivities.

All linear solves go through a ``solver(kind, case, K, b)`` callable so the
driver can route them through its accelerated path; ``kind`` is ``"state"``
or ``"adjoint"`` and ``case`` identifies the right-hand-side family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import fem
from .fem import DensityFilter, FilterSpec, MaterialModel, Mesh, StiffnessAssembler

RHO_FLOOR = 1e-9


@dataclass(frozen=True)
class VolumeUpper:
    """``sum(x v) <= fraction * total volume``."""

    fraction: float

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("volume fraction must be in (0, 1]")


@dataclass(frozen=True)
class StressPnorm:
    """p-norm aggregate of relaxed von Mises stress below ``sigma_limit``."""

    sigma_limit: float
    p: float = 8.0
    load_case: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p-norm exponent must be >= 2")
        if self.sigma_limit <= 0:
            raise ValueError("sigma_limit must be positive")


def compliance(u, b) -> float:
    return float(np.dot(u, b))


def volume_constraint(x, v, V_u) -> float:
    return float(np.dot(x, v) - V_u)


def compliance_gradient(assembler: StiffnessAssembler, u, rho) -> np.ndarray:
    """d(u^T K u)/d rho for a fixed load: ``-E'(rho_e) u_e^T Ke u_e``."""
    return -fem.simp_modulus_derivative(rho, assembler.material) * assembler.element_energies(u)


def _scatter(mesh: Mesh, elem_vectors: np.ndarray) -> np.ndarray:
    dofs = mesh.elem_dofs.ravel()
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=elem_vectors.ravel()[keep], minlength=mesh.n_free)


def stress_pnorm_constraint(mesh: Mesh, u, rho, m: MaterialModel, p: float, sigma_limit: float):
    """Normalised p-norm stress constraint ``PN(T / sigma_limit) - 1``.

    Returns ``(g, dg_du, dg_drho_explicit, relaxed_stress)``; ``dg_du`` is the
    adjoint right-hand side on the free DOFs. The p-norm is evaluated with the
    largest term factored out so large ``p`` cannot overflow.
    """
    D = m.constitutive()
    B0 = fem.strain_displacement(0.0, 0.0, mesh.hx, mesh.hy)
    DB = D @ B0
    sigma = mesh.element_field(u) @ DB.T
    vm = np.sqrt(np.maximum(np.einsum("ei,ij,ej->e", sigma, fem.VM_MATRIX, sigma), 0.0))
    relax = rho ** m.stress_q
    T = relax * vm
    t = T / sigma_limit
    tmax = t.max()
    if tmax <= 0.0:
        return -1.0, np.zeros(mesh.n_free), np.zeros(mesh.n_elem), T
    pn = tmax * np.sum((t / tmax) ** p) ** (1.0 / p)
    w = (t / pn) ** (p - 1.0)  # dPN/dt_e
    with np.errstate(invalid="ignore", divide="ignore"):
        dvm_dsigma = np.where(vm[:, None] > 0, (sigma @ fem.VM_MATRIX) / vm[:, None], 0.0)
    dvm_due = dvm_dsigma @ DB  # (n_elem, 8)
    dg_du = _scatter(mesh, (w * relax / sigma_limit)[:, None] * dvm_due)
    dg_drho = w * m.stress_q * rho ** (m.stress_q - 1.0) * vm / sigma_limit
    return pn - 1.0, dg_du, dg_drho, T


def adjoint_gradient(assembler: StiffnessAssembler, dg_drho_explicit, lam, u, rho) -> np.ndarray:
    """``dg/drho_e = dg/drho_e|explicit - lam^T (dK/drho_e) u``, element-wise."""
    dE = fem.simp_modulus_derivative(rho, assembler.material)
    return dg_drho_explicit - dE * assembler.element_energies(lam, u)


def exact_solver(kind, case, K, b):
    """Direct sparse solve; reference path for tests and finite differences."""
    return spla.spsolve(K.tocsc(), b)


@dataclass
class Evaluation:
    x: np.ndarray
    rho: np.ndarray
    f: float
    g: np.ndarray
    u: list
    df_dx: np.ndarray | None = None
    dg_dx: np.ndarray | None = None
    stress: np.ndarray | None = None
    solves: list = field(default_factory=list)


class DesignProblem:
    """A density-based design problem on a structured mesh.

    ``objective`` is ``"compliance"`` (mean over load cases) or ``"mass"``.
    Values are scaled for the optimizer: the objective by ``objective_scale``
    and volume constraints by the total design volume.
    """

    def __init__(self, mesh: Mesh, material: MaterialModel, filter_spec: FilterSpec,
                 load_cases, objective: str = "compliance", constraints=(),
                 objective_scale: float = 1.0):
        if not load_cases:
            raise ValueError("at least one load case is required")
        if objective not in ("compliance", "mass"):
            raise ValueError(f"unknown objective {objective!r}")
        constraints = list(constraints)
        kinds = {type(c) for c in constraints}
        if objective == "compliance" and VolumeUpper not in kinds:
            raise ValueError("compliance minimisation needs a volume constraint")
        if objective == "mass" and StressPnorm not in kinds:
            raise ValueError("mass minimisation needs a stress constraint")
        for c in constraints:
            if isinstance(c, StressPnorm) and not 0 <= c.load_case < len(load_cases):
                raise ValueError("stress constraint refers to a missing load case")
        self.mesh = mesh
        self.material = material
        self.filter_spec = filter_spec
        self.objective = objective
        self.constraints = constraints
        self.objective_scale = objective_scale
        self.assembler = StiffnessAssembler(mesh, material)
        self.filter = DensityFilter(mesh, filter_spec)
        self.loads = [fem.assemble_load(mesh, lc) for lc in load_cases]
        self.total_volume = float(mesh.volumes.sum())

    @property
    def n_design(self) -> int:
        return self.mesh.n_elem

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def needs_state(self) -> bool:
        return self.objective == "compliance" or any(
            isinstance(c, StressPnorm) for c in self.constraints)

    def filtered(self, x):
        return np.maximum(self.filter.apply(x), RHO_FLOOR)

    def evaluate(self, x, solver=exact_solver, gradients: bool = True) -> Evaluation:
        x = np.asarray(x, dtype=float)
        rho = self.filtered(x)
        K = self.assembler.assemble(rho) if self.needs_state else None
        u = [solver("state", i, K, b) for i, b in enumerate(self.loads)] if K is not None else []
        v = self.mesh.volumes
        if self.objective == "compliance":
            f = float(np.mean([compliance(ui, bi) for ui, bi in zip(u, self.loads)]))
        else:
            f = float(np.dot(x, v)) / self.total_volume
        g = np.zeros(self.n_constraints)
        stress_parts = {}
        for i, c in enumerate(self.constraints):
            if isinstance(c, VolumeUpper):
                g[i] = volume_constraint(x, v, c.fraction * self.total_volume) / self.total_volume
            else:
                stress_parts[i] = stress_pnorm_constraint(
                    self.mesh, u[c.load_case], rho, self.material, c.p, c.sigma_limit)
                g[i] = stress_parts[i][0]
        ev = Evaluation(x=x, rho=rho, f=f * self.objective_scale, g=g, u=u)
        if stress_parts:
            ev.stress = next(iter(stress_parts.values()))[3]
        ev._K = K
        ev._stress_parts = stress_parts
        if gradients:
            self.gradients(ev, solver)
        return ev

    def gradients(self, ev: Evaluation, solver=exact_solver) -> Evaluation:
        """Fill ``df_dx`` and ``dg_dx`` (one row per constraint)."""
        rho, u, v = ev.rho, ev.u, self.mesh.volumes
        F = self.filter
        if self.objective == "compliance":
            dc = np.mean([compliance_gradient(self.assembler, ui, rho) for ui in u], axis=0)
            ev.df_dx = F.transpose(dc) * self.objective_scale
        else:
            ev.df_dx = v / self.total_volume * self.objective_scale
        dg = np.zeros((self.n_constraints, self.n_design))
        for i, c in enumerate(self.constraints):
            if isinstance(c, VolumeUpper):
                dg[i] = v / self.total_volume
            else:
                _, dg_du, dg_drho, _ = ev._stress_parts[i]
                lam = solver("adjoint", i, ev._K, dg_du)
                dg[i] = F.transpose(adjoint_gradient(self.assembler, dg_drho, lam,
                                                     u[c.load_case], rho))
        ev.dg_dx = dg
        return ev
