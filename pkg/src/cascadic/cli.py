"""Command-line front end for the cascade experiments.

Each preset reproduces one of the four convergence tables::

    cascadic --preset square-th --solver ucg --levels 8
    cascadic --preset lshape-graded --solver ug --levels 9 --format text

CSV goes to stdout unless ``--output`` is given. The exit status is 0 when
no level hit the iteration cap and 1 otherwise.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, TextIO

from .cascade import CascadeConfig, Complexity, LevelReport, run_cascade
from .fem import ElementPair
from .mesh import Domain, RefinementRule
from .solvers import Method, SolverKind

COLUMNS = ("level", "h", "N_dof", "err_u", "rate_u", "err_p", "rate_p",
           "iters", "final_residual")


class UsageError(Exception):
    """Bad command line; carries the message shown to the user."""


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    config: CascadeConfig
    alpha: float
    kappa: float | None = None


def _preset(name, domain, pair, c_lc, s, complexity, alpha, levels, kappa=None):
    rule = RefinementRule.graded(kappa) if kappa is not None else RefinementRule.uniform()
    cfg = CascadeConfig(domain=domain, pair=pair, refinement=rule, levels=levels,
                        c_lc=c_lc, s=s, complexity=complexity)
    return ExperimentPreset(name, cfg, alpha, kappa)


PRESETS = {
    p.name: p for p in (
        _preset("square-p2p0", Domain.UNIT_SQUARE, ElementPair.P2P0,
                1 / 16, 1.0, Complexity.MESH_SIZE, 0.8, 8),
        _preset("square-th", Domain.UNIT_SQUARE, ElementPair.TAYLOR_HOOD,
                1 / 16, 2.0, Complexity.MESH_SIZE, 1.0, 8),
        _preset("lshape-uniform", Domain.L_SHAPE, ElementPair.TAYLOR_HOOD,
                1 / 8, 1 / 3, Complexity.DOF_COUNT, 1.0, 8),
        _preset("lshape-graded", Domain.L_SHAPE, ElementPair.TAYLOR_HOOD,
                1 / 8, 1.0, Complexity.DOF_COUNT, 1.0, 9, kappa=1 / 8),
    )
}


@dataclass(frozen=True)
class RunSpec:
    """One cascade run plus where and how to print it."""

    preset: str
    config: CascadeConfig
    print_from: int
    fmt: str
    output: Path | None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return value


def _level(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"levels start at 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cascadic", description=__doc__.split("\n\n")[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="square-th")
    ap.add_argument("--solver", choices=[m.value for m in Method], action="append",
                    help="level solver; repeat to run several (default: ucg)")
    ap.add_argument("--alpha", type=_positive, help="Uzawa relaxation parameter")
    ap.add_argument("--clc", type=_positive, help="level-change constant C_lc")
    ap.add_argument("--s", type=_positive, help="level-change exponent")
    ap.add_argument("--complexity", choices=[c.value for c in Complexity],
                    help="threshold in mesh size (h) or dof count (n)")
    ap.add_argument("--kappa", type=_positive,
                    help="grading ratio toward the re-entrant corner (L-shape only)")
    ap.add_argument("--levels", type=_level, help="finest level")
    ap.add_argument("--start-level", type=_level, default=1, help="first iterated level")
    ap.add_argument("--print-from", type=_level, default=4, help="first printed level")
    ap.add_argument("--format", choices=("csv", "text"), default="csv")
    ap.add_argument("--output", type=Path,
                    help="output file; with several solvers, the solver name is appended")
    ap.add_argument("--jobs", type=int, default=1, help="run solvers in parallel processes")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every level")
    return ap


def parse_args(argv: list[str] | None = None) -> tuple[list[RunSpec], argparse.Namespace]:
    """Resolve flags against the preset; raises ``UsageError``."""
    ns = build_parser().parse_args(argv)
    preset = PRESETS[ns.preset]
    cfg = preset.config
    changes = {}
    if ns.clc is not None:
        changes["c_lc"] = ns.clc
    if ns.s is not None:
        changes["s"] = ns.s
    if ns.complexity is not None:
        changes["complexity"] = Complexity(ns.complexity)
    if ns.levels is not None:
        changes["levels"] = ns.levels
    changes["start_level"] = ns.start_level
    if ns.kappa is not None:
        if cfg.domain is not Domain.L_SHAPE:
            raise UsageError("--kappa only applies to the L-shaped presets")
        changes["refinement"] = (RefinementRule.uniform() if ns.kappa == 1.0
                                 else RefinementRule.graded(ns.kappa))
    if ns.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    alpha = ns.alpha if ns.alpha is not None else preset.alpha

    solvers = list(dict.fromkeys(ns.solver or ["ucg"]))
    runs = []
    for name in solvers:
        method = Method(name)
        kind = SolverKind(method, alpha) if method is Method.UZAWA else SolverKind(method)
        try:
            run_cfg = replace(cfg, solver=kind, **changes)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        out = ns.output
        if out is not None and len(solvers) > 1:
            out = out.with_name(f"{out.stem}-{name}{out.suffix}")
        if ns.print_from > run_cfg.levels:
            raise UsageError(f"--print-from {ns.print_from} is beyond the finest level "
                             f"{run_cfg.levels}")
        runs.append(RunSpec(ns.preset, run_cfg, ns.print_from, ns.format, out))
    return runs, ns


def _csv_field(x) -> str:
    return "" if x is None else repr(x)


def _row(r: LevelReport, first: bool):
    rate_u = None if first else r.rate_u
    rate_p = None if first else r.rate_p
    return (r.k, r.h, r.n_dof, r.err_u, rate_u, r.err_p, rate_p, r.iterations,
            r.final_residual)


def emit_table(reports: Iterable[LevelReport], fmt: str = "csv",
               stream: TextIO | None = None, print_from: int = 1) -> None:
    """Write the reports with ``level >= print_from`` as CSV or aligned text.

    Rates on the first printed row are left empty since that row has no
    printed predecessor.
    """
    rows = [r for r in reports if r.k >= print_from]
    if not rows:
        raise ValueError("no reports to print")
    stream = stream or sys.stdout
    if fmt == "csv":
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(COLUMNS)
        for i, r in enumerate(rows):
            w.writerow([_csv_field(v) if isinstance(v, float) or v is None else str(v)
                        for v in _row(r, i == 0)])
        return
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")

    def cell(col, v):
        if v is None:
            return ""
        if col in ("rate_u", "rate_p"):
            return f"{v:.2f}"
        if col in ("err_u", "err_p", "h", "final_residual"):
            return f"{v:.7g}"
        return str(v)

    table = [list(COLUMNS)] + [[cell(c, v) for c, v in zip(COLUMNS, _row(r, i == 0))]
                               for i, r in enumerate(rows)]
    widths = [max(len(row[j]) for row in table) for j in range(len(COLUMNS))]
    for row in table:
        stream.write("  ".join(s.rjust(wd) for s, wd in zip(row, widths)).rstrip() + "\n")


def read_csv_table(text: str) -> list[dict]:
    """Parse CSV produced by ``emit_table`` back into typed rows."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in rec.items():
            if k in ("level", "N_dof", "iters"):
                row[k] = int(v)
            else:
                row[k] = float(v) if v != "" else None
        out.append(row)
    return out


def execute(run: RunSpec) -> tuple[str, bool]:
    """Run one cascade; returns (rendered table, any level capped)."""
    reports = run_cascade(run.config)
    buf = io.StringIO()
    emit_table(reports, run.fmt, buf, run.print_from)
    return buf.getvalue(), any(r.capped for r in reports)


def main(argv: list[str] | None = None) -> int:
    try:
        runs, ns = parse_args(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    if ns.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            results = list(pool.map(execute, runs))
    else:
        results = [execute(r) for r in runs]

    capped = False
    for run, (text, hit_cap) in zip(runs, results):
        capped |= hit_cap
        try:
            if run.output is None:
                if len(runs) > 1:
                    sys.stdout.write(f"# {run.preset} {run.config.solver}\n")
                sys.stdout.write(text)
            else:
                run.output.write_text(text)
        except OSError as exc:
            print(f"cascadic: cannot write output: {exc}", file=sys.stderr)
            return 1
    return 1 if capped else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
