"""Command line entry point.

    romtopo run [--config FILE] [--mode MODE] [--out DIR] [--seed N] [--set key=value ...]
    romtopo compare --runs DIR DIR [...] [--out FILE]
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .config import MODES, ConfigError, parse_config
from .driver import run_optimization
from .presets import build_problem
from .reports import ReportError, compare_modes, emit_reports, format_comparison, read_summary

logger = logging.getLogger("romtopo")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="romtopo", description="ROM-accelerated topology optimization")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one optimization")
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override one configuration key (repeatable)")

    cmp_ = sub.add_parser("compare", help="compare finished runs against the default-mode run")
    cmp_.add_argument("--runs", nargs="+", required=True, metavar="DIR")
    cmp_.add_argument("--out", help="also write the ratios as CSV to this file")
    return p


def cmd_run(args) -> int:
    overrides = list(args.overrides)
    for key in ("mode", "out", "seed"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg = parse_config(args.config, overrides)
    np.random.seed(cfg.seed)
    problem = build_problem(cfg)
    logger.info("running %s in mode %s (%d design variables)", cfg.preset, cfg.mode, problem.n_design)
    result = run_optimization(problem, cfg)
    paths = emit_reports(result, cfg.out)
    print(paths["summary.txt"].read_text(), end="")
    if result.message:
        print(f"status: {result.message}")
    return 0 if result.converged else 2


def cmd_compare(args) -> int:
    summaries = {d: read_summary(d) for d in args.runs}
    table = compare_modes(summaries)
    print(format_comparison(summaries, table), end="")
    if args.out:
        rows = next(iter(table.values())).keys()
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", *rows])
            for name, ratios in table.items():
                w.writerow([name, *(repr(ratios[r]) for r in rows)])
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_run(args) if args.command == "run" else cmd_compare(args)
    except (ConfigError, ReportError, OSError) as exc:
        print(f"romtopo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
