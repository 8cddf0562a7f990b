"""Run outputs: summary table, solve telemetry, convergence history and
design fields (legacy VTK and binary PGM).

Design fields hold the raw design variables ``x`` (before filtering), which
is the optimizer's decision space. Masked-out elements of an L-bracket grid
are written as 0.
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path

import numpy as np

from .config import serialize
from .driver import TELEMETRY_FIELDS

CONVERGENCE_FIELDS = ("iter", "f", "max_g", "r_kkt", "omega", "alpha")

# row labels follow the usual layout of ROM-acceleration result tables
ROW_PRESET = "Problem preset"
ROW_MODE = "Mode"
ROW_OBJECTIVE = {"compliance": "Optimal compliance", "mass": "Optimal mass fraction"}
ROW_OPT_ITERS = "Optimizer iter."
ROW_SOLVES = "Number of linear solves"
ROW_TOTAL = "Total iters. of linear solve"
ROW_AVG = "Avg. iters. of linear solve"
ROW_TIME = "Total wall clock time of linear solve"
ROW_KKT = "KKT norm"
ROW_MAX_STRESS = "Max relaxed von Mises stress"
ROW_CONVERGED = "Converged"
ROW_REFINE = "Threshold refinements"
ROW_ROM_ACCEPTED = "ROM-accepted solves"
ROW_SPEEDUP = "Speed-up of total linear solve"
ROW_TOTAL_RED = "Total iter. reduction of linear solve"
ROW_AVG_RED = "Avg. iter. reduction of linear solve"


class ReportError(RuntimeError):
    pass


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def summary_rows(result) -> list[tuple[str, object]]:
    cfg = result.config
    counts = result.mode_counts()
    rows = [
        (ROW_PRESET, cfg.preset),
        (ROW_MODE, cfg.mode),
        (ROW_OBJECTIVE[cfg.objective], float(result.objective)),
        (ROW_OPT_ITERS, int(result.iterations)),
        (ROW_SOLVES, int(result.n_solves)),
        (ROW_TOTAL, int(result.total_iters)),
        (ROW_AVG, float(result.avg_iters)),
        (ROW_TIME, float(result.solve_time)),
        (ROW_KKT, float(result.r_kkt)),
        (ROW_ROM_ACCEPTED, int(counts["rom-accepted"])),
        (ROW_REFINE, int(result.refinements)),
        (ROW_CONVERGED, int(bool(result.converged))),
    ]
    if result.stress is not None and len(result.stress):
        rows.append((ROW_MAX_STRESS, float(np.max(result.stress))))
    return rows


def write_pgm(path, mesh, x) -> np.ndarray:
    """Binary P5 image, ``ny`` rows by ``nx`` columns, top row = top of the domain.

    Pixel value is ``round(255 * x)`` with ``x`` clipped to [0, 1]; inactive
    elements are 0. Returns the pixel array.
    """
    grid = mesh.to_grid(np.clip(np.asarray(x, float), 0.0, 1.0), fill=0.0)
    pix = np.rint(255.0 * grid).astype(np.uint8)[::-1]
    header = f"P5\n# raw design variables x (pre-filter)\n{mesh.nx} {mesh.ny}\n255\n".encode()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pix.tobytes())
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return pix


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ReportError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def write_vtk(path, mesh, x, stress=None):
    """Legacy ASCII structured-points file with cell scalars ``density`` and
    ``vonmises``; cells are ordered x-fastest from the bottom-left corner."""
    density = mesh.to_grid(np.asarray(x, float), fill=0.0).ravel()
    vm = np.zeros(mesh.nx * mesh.ny) if stress is None else mesh.to_grid(stress, fill=0.0).ravel()
    lines = [
        "# vtk DataFile Version 3.0",
        "romtopo design: density = raw design variables x (pre-filter), vonmises = relaxed stress",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1",
        "ORIGIN 0 0 0",
        f"SPACING {mesh.hx!r} {mesh.hy!r} 1",
        f"CELL_DATA {mesh.nx * mesh.ny}",
        "SCALARS density double 1",
        "LOOKUP_TABLE default",
        *(repr(float(v)) for v in density),
        "SCALARS vonmises double 1",
        "LOOKUP_TABLE default",
        *(repr(float(v)) for v in vm),
    ]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def emit_reports(result, out_dir) -> dict:
    """Write every output file of a run into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out}: {exc}") from exc
    paths = {name: out / name for name in
             ("summary.csv", "summary.txt", "iters.csv", "convergence.csv",
              "design.vtk", "design.pgm", "config.txt")}
    rows = summary_rows(result)
    _write_csv(paths["summary.csv"], ("quantity", "value"), [(k, _fmt(v)) for k, v in rows])
    width = max(len(k) for k, _ in rows)
    paths["summary.txt"].write_text("".join(f"{k:<{width}}  {_fmt(v)}\n" for k, v in rows))
    _write_csv(paths["iters.csv"], TELEMETRY_FIELDS,
               ([_fmt(v) for v in r.row()] for r in result.records))
    _write_csv(paths["convergence.csv"], CONVERGENCE_FIELDS,
               ([_fmt(h.get(k, float("nan"))) for k in CONVERGENCE_FIELDS] for h in result.history))
    if result.mesh is not None:
        write_vtk(paths["design.vtk"], result.mesh, result.x, result.stress)
        write_pgm(paths["design.pgm"], result.mesh, result.x)
    paths["config.txt"].write_text(serialize(result.config))
    return paths


def read_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.csv"
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc
    out = {}
    for label, value in rows[1:]:
        try:
            out[label] = float(value)
        except ValueError:
            out[label] = value
    return out


def compare_modes(summaries: dict) -> dict:
    """Ratios default / mode for every non-default run.

    ``summaries`` maps a run name to its summary dict (see
    :func:`read_summary`). Exactly one run must be in default mode and all
    runs must share the problem preset. Returns ``{name: {row: ratio}}``.
    """
    if len(summaries) < 2:
        raise ReportError("need at least two runs to compare")
    presets = {s.get(ROW_PRESET) for s in summaries.values()}
    if len(presets) != 1:
        raise ReportError(f"runs use different problem presets: {sorted(map(str, presets))}")
    base = [n for n, s in summaries.items() if s.get(ROW_MODE) == "default"]
    if len(base) != 1:
        raise ReportError("exactly one run must use the default mode")
    ref = summaries[base[0]]

    def ratio(a, b):
        return a / b if b else float("inf") if a else 1.0

    table = {}
    for name, s in summaries.items():
        table[name] = {
            ROW_SPEEDUP: ratio(ref[ROW_TIME], s[ROW_TIME]),
            ROW_TOTAL_RED: ratio(ref[ROW_TOTAL], s[ROW_TOTAL]),
            ROW_AVG_RED: ratio(ref[ROW_AVG], s[ROW_AVG]),
        }
    return table


def format_comparison(summaries: dict, table: dict) -> str:
    names = list(summaries)
    rows = [ROW_MODE]
    for s in summaries.values():
        rows += [k for k in s if k not in rows and k != ROW_PRESET]
    rows += [ROW_SPEEDUP, ROW_TOTAL_RED, ROW_AVG_RED]
    width = max(len(r) for r in rows)
    colw = max(12, *(len(n) for n in names))

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return "" if v is None else str(v)

    lines = [" " * width + "".join(f"  {n:>{colw}}" for n in names)]
    for r in rows:
        vals = [table[n].get(r) if r in table[n] else summaries[n].get(r) for n in names]
        lines.append(f"{r:<{width}}" + "".join(f"  {cell(v):>{colw}}" for v in vals))
    return "\n".join(lines) + "\n"
