"""Run configuration: flat ``key = value`` files, presets and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

MODES = ("default", "rom-qr", "rom-svd")
PRESETS = ("cantilever2d", "lbracket2d", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "cantilever2d"
    # mesh: domain size lx by ly (m) split into nx by ny elements
    nx: int = 48
    ny: int = 16
    lx: float = 3.0
    ly: float = 1.0
    # L-bracket cut-out: fraction of each side removed from the upper right
    cutout: float = 0.6
    # material
    E0: float = 2.0e11
    nu: float = 0.29
    simp_s: float = 3.0
    stress_q: float = 0.5
    emin_ratio: float = 1e-6
    # filter: helmholtz, mass or none
    filter: str = "helmholtz"
    filter_radius: float = 0.1
    # problem
    objective: str = "compliance"
    volfrac: float = 0.5
    sigma_limit: float = 20.0
    pnorm: float = 8.0
    load: float = 1.0e5
    x_init: float = 0.5
    # linear solves
    mode: str = "default"
    preconditioner: str = "jacobi"
    pcg_option: int = 2
    kappa_rom: float = 1e-2
    kappa_pcg: float = 1e-2
    kappa_cut: float = 1e-3
    eps_pcg: float = 1e-4
    pcg_lower: float = 1e-8
    pcg_upper: float = 1e-3
    tol_abs: float = 1e-30
    pcg_maxit: int = 20000
    tol_qr: float = 1e-9
    tol_svd: float = 1e-9
    r_max: int = 10
    svd_saturation: str = "reinit"
    x_ref: str = "zero"
    # r_kkt fed to the ROM and PCG thresholds is capped here (inf disables)
    r_kkt_cap: float = 1.0
    # times kappa_rom and kappa_pcg are cut by 10 after a failed line search
    refine_max: int = 3
    # optimizer
    eps_tol: float = 1e-6
    max_iter: int = 1000
    hessian: str = "lbfgs"
    omega0: float = 0.1
    seed: int = 0
    out: str = "out"

    def validate(self) -> "RunConfig":
        def bad(key, why):
            raise ConfigError(f"invalid value for {key!r}: {getattr(self, key)!r} ({why})")

        if self.preset not in PRESETS:
            bad("preset", f"expected one of {', '.join(PRESETS)}")
        if self.mode not in MODES:
            bad("mode", f"expected one of {', '.join(MODES)}")
        for key in ("nx", "ny"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.r_max < 1:
            bad("r_max", "must be >= 1")
        for key in ("lx", "ly", "E0", "kappa_cut", "eps_pcg", "pcg_lower", "pcg_upper",
                    "tol_abs", "tol_qr", "tol_svd", "eps_tol", "sigma_limit", "omega0", "r_kkt_cap",
                    "emin_ratio"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        for key in ("kappa_rom", "kappa_pcg"):
            if not 0 < getattr(self, key) < 1:
                bad(key, "must be in (0, 1)")
        if not 0 < self.volfrac <= 1:
            bad("volfrac", "must be in (0, 1]")
        if not 0 < self.x_init < 1:
            bad("x_init", "must be in (0, 1)")
        if not 0 < self.cutout < 1:
            bad("cutout", "must be in (0, 1)")
        if not -1 < self.nu < 0.5:
            bad("nu", "must be in (-1, 0.5)")
        if not self.simp_s > 1:
            bad("simp_s", "must be > 1")
        if not 0 < self.stress_q < 1:
            bad("stress_q", "must be in (0, 1)")
        if self.pnorm < 2:
            bad("pnorm", "must be >= 2")
        if self.filter not in ("helmholtz", "mass", "none"):
            bad("filter", "expected helmholtz, mass or none")
        if self.filter_radius < 0:
            bad("filter_radius", "must be >= 0")
        if self.objective not in ("compliance", "mass"):
            bad("objective", "expected compliance or mass")
        if self.preconditioner not in ("jacobi", "ic0"):
            bad("preconditioner", "expected jacobi or ic0")
        if self.pcg_option not in (1, 2):
            bad("pcg_option", "expected 1 or 2")
        if self.pcg_option == 1 and not self.pcg_lower < self.pcg_upper:
            bad("pcg_lower", "must be below pcg_upper")
        if self.svd_saturation not in ("reinit", "drop_oldest"):
            bad("svd_saturation", "expected reinit or drop_oldest")
        if self.x_ref not in ("zero", "previous"):
            bad("x_ref", "expected zero or previous")
        if self.hessian not in ("lbfgs", "bb"):
            bad("hessian", "expected lbfgs or bb")
        if self.refine_max < 0:
            bad("refine_max", "must be >= 0")
        if self.max_iter < 0 or self.pcg_maxit < 1:
            bad("max_iter" if self.max_iter < 0 else "pcg_maxit", "out of range")
        return self


PRESET_VALUES = {
    "cantilever2d": {},
    "lbracket2d": dict(
        nx=70, ny=70, lx=0.1, ly=0.1, E0=1.0e6, nu=0.3, objective="mass",
        filter_radius=0.002, sigma_limit=20.0, pnorm=8.0, load=0.005, x_init=0.5,
        kappa_rom=1e-3, kappa_pcg=1e-3, eps_pcg=1e-8,
    ),
    "custom": {},
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    default = getattr(RunConfig(), key)
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from exc
    return raw.strip()


def parse_pairs(lines) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def make_config(values: dict | None = None) -> RunConfig:
    """Build a validated config: preset defaults, then explicit values."""
    values = dict(values or {})
    for key in values:
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
    preset = values.get("preset", "cantilever2d")
    if preset not in PRESETS:
        raise ConfigError(f"invalid value for 'preset': {preset!r}")
    merged = {**PRESET_VALUES[preset], **values}
    return RunConfig(**merged).validate()


def parse_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_pairs(fh))
    values.update(parse_pairs(overrides))
    return make_config(values)


def serialize(cfg: RunConfig) -> str:
    """Canonical text form: every key, sorted, one per line."""
    d = dataclasses.asdict(cfg)
    return "".join(f"{k} = {d[k]!r}\n".replace("'", "") for k in sorted(d))
