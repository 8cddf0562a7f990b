"""Benchmark problem definitions built from a :class:`RunConfig`.

cantilever2d
    Left edge clamped, downward point load at the middle of the right edge,
    compliance minimisation under a volume bound.
lbracket2d
    Square domain with the upper-right block removed. The top edge of the
    vertical arm is clamped; a downward load is spread over the upper part of
    the right edge of the horizontal arm. Mass minimisation under a p-norm
    stress bound.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .fem import FilterSpec, MaterialModel, Mesh
from .problem import DesignProblem, StressPnorm, VolumeUpper


def lbracket_mask(nx: int, ny: int, cutout: float) -> np.ndarray:
    active = np.ones((ny, nx), dtype=bool)
    cx = int(round(nx * (1.0 - cutout)))
    cy = int(round(ny * (1.0 - cutout)))
    active[cy:, cx:] = False
    return active


def build_problem(cfg: RunConfig) -> DesignProblem:
    nx, ny = cfg.nx, cfg.ny
    hx, hy = cfg.lx / nx, cfg.ly / ny
    material = MaterialModel(E0=cfg.E0, nu=cfg.nu, simp_s=cfg.simp_s, stress_q=cfg.stress_q,
                             E_min=cfg.emin_ratio * cfg.E0)
    filt = FilterSpec(cfg.filter, cfg.filter_radius)
    if cfg.preset == "lbracket2d":
        active = lbracket_mask(nx, ny, cfg.cutout)
        cx = int(round(nx * (1.0 - cfg.cutout)))
        cy = int(round(ny * (1.0 - cfg.cutout)))
        fixed = [(i, ny, c) for i in range(cx + 1) for c in (0, 1)]
        mesh = Mesh(nx, ny, hx, hy, active=active, fixed=fixed)
        span = max(1, cy // 4)
        nodes = list(range(cy - span, cy + 1))
        loads = [(nx, j, 1, -cfg.load / len(nodes)) for j in nodes]
    else:
        mesh = Mesh(nx, ny, hx, hy, fixed=[(0, j, c) for j in range(ny + 1) for c in (0, 1)])
        loads = [(nx, ny // 2, 1, -cfg.load)]
    if cfg.objective == "mass":
        constraints = [StressPnorm(cfg.sigma_limit, cfg.pnorm)]
    else:
        constraints = [VolumeUpper(cfg.volfrac)]
    return DesignProblem(mesh, material, filt, [loads], cfg.objective, constraints)
