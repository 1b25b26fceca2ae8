"""Command line: ``dtce run`` for one scenario file, ``dtce batch`` for a directory."""

from __future__ import annotations

import argparse
import csv
import io as _io
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import EquilibriumSolution, compare_with_oracle, solve_analytic, solve_oracle
from .core import DTCEError, Family, PreconditionError, ValidationError
from .io import dump_yaml, load_scenario
from .queue import ReconstructionError, reconstruct_arrivals, verify_equilibrium

EXIT_OK, EXIT_VERIFY, EXIT_VALIDATION, EXIT_PRECONDITION = 0, 1, 2, 3
OUT_ENV = "DTCE_OUT_DIR"
ORACLE_ONLY = (Family.TOLL, Family.DSO)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _label(cls):
    j, k = cls
    return ("" if j is None else j), k


def _write_solution(out: Path, sol: EquilibriumSolution) -> None:
    rows = []
    for side, vals in sol.breakpoints.items():
        if side.endswith("_mass"):
            continue
        rows += [(side, i, float(v)) for i, v in enumerate(vals)]
    write_csv(out / "breakpoints.csv", ["side", "index", "s [h]"], rows)
    write_csv(
        out / "trip_costs.csv",
        ["class", "location", "group", "mass [veh]", "v [h]"],
        [(ci, *_label(c), float(m), float(v)) for ci, (c, m, v) in enumerate(zip(sol.classes, sol.class_mass, sol.v))],
    )
    write_csv(
        out / "bands.csv",
        ["class", "location", "group", "side", "start [h]", "end [h]", "level [h]"],
        [(b.cls, *_label(sol.classes[b.cls]), b.side, b.start, b.end, b.level) for b in sol.bands],
    )


def _write_curves(out: Path, sol: EquilibriumSolution, grid) -> list[str]:
    notes = []
    write_csv(out / "u.csv", ["s [h]", "u [h]"], zip(sol.u_times, sol.u_values))
    try:
        rec = reconstruct_arrivals(sol, grid)
    except ReconstructionError as exc:
        notes.append(f"arrival curves not written: {exc}")
        return notes
    names = [f"class{ci} [veh]" for ci in range(len(sol.classes))]
    dep_groups = [sol.departed_mass(ci, rec.departure_times) for ci in range(len(sol.classes))]
    write_csv(out / "departures.csv", ["s [h]", "D [veh]"] + names,
              zip(rec.departure_times, rec.departures.mass, *dep_groups))
    write_csv(out / "arrivals.csv", ["t [h]", "A [veh]"] + names,
              zip(rec.arrival_times, rec.arrivals.mass, *[g.mass for g in rec.group_arrivals]))
    return notes


def _write_oracle(out: Path, oracle, grid) -> None:
    du = oracle.duals
    write_csv(out / "oracle_u.csv", ["s [h]", "u [h]"], zip(grid.midpoints, du.u))
    flow = oracle.flow.flow.reshape(-1, grid.cells)
    write_csv(out / "oracle_flow.csv", ["s [h]"] + [f"row{r} [veh]" for r in range(flow.shape[0])],
              zip(grid.midpoints, *flow))


@dataclass
class RunResult:
    exit_code: int
    family: str = ""
    Z: float | None = None
    gap: float | None = None
    verdict: str = ""
    error: str = ""


def run_scenario(path: Path, out_root: Path | None, oracle: bool = False, verify: bool = False,
                 curves: bool = False, tol: float | None = None, grid_cells: int | None = None,
                 stream=None) -> RunResult:
    stream = stream or sys.stdout
    t0 = time.perf_counter()
    try:
        sf = load_scenario(path)
    except ValidationError as exc:
        for p, m in exc.errors:
            print(f"validation error: {p}: {m}", file=sys.stderr)
        return RunResult(EXIT_VALIDATION, verdict="invalid", error="; ".join(f"{p}: {m}" for p, m in exc.errors))
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return RunResult(EXIT_VALIDATION, verdict="invalid", error=str(exc))
    sc, grid = sf.scenario, sf.grid
    if grid_cells:
        grid = grid.with_cells(grid_cells)
    oracle = oracle or sf.options.oracle
    verify = verify or sf.options.verify
    tol = tol if tol is not None else sf.options.tol
    out = (out_root or Path("out")) / path.stem
    out.mkdir(parents=True, exist_ok=True)
    family = sc.family.value
    timings = {}
    summary = {"scenario": path.name, "model_family": family, "grid": {"start": grid.start, "end": grid.end, "cells": grid.cells}}
    verdict_ok = True
    notes: list[str] = []
    gap = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if sc.family in ORACLE_ONLY:
                t = time.perf_counter()
                oracle_sol = solve_oracle(sc, grid)
                timings["oracle"] = time.perf_counter() - t
                Z = oracle_sol.Z
                summary["solver"] = "discretized LP (no closed form for this family)"
                summary["Z [veh h]"] = Z
                _write_oracle(out, oracle_sol, grid)
                report = verify_equilibrium(oracle_sol, grid)
            else:
                t = time.perf_counter()
                sol = solve_analytic(sc, grid)
                timings["analytic"] = time.perf_counter() - t
                Z = sol.Z
                summary["solver"] = "analytic"
                summary["Z [veh h]"] = Z
                summary["window [h]"] = [sol.window[0], sol.window[1]]
                if sol.s0 is not None:
                    summary["s0 [h]"] = sol.s0
                if sol.existence is not None:
                    summary["existence_margin"] = sol.existence.margin
                _write_solution(out, sol)
                if curves:
                    notes += _write_curves(out, sol, grid)
                t = time.perf_counter()
                report = verify_equilibrium(sol, grid)
                timings["verify"] = time.perf_counter() - t
                notes += sol.notes
                if oracle:
                    t = time.perf_counter()
                    oracle_sol = solve_oracle(sc, grid)
                    timings["oracle"] = time.perf_counter() - t
                    cmp = compare_with_oracle(sol, oracle_sol, factor=sf.options.bound_factor)
                    bound = tol if tol is not None else cmp.bound
                    gap = cmp.rel_gap
                    ok = cmp.rel_gap <= bound and cmp.bands_match
                    verdict_ok &= ok
                    (out / "oracle.yaml").write_text(dump_yaml({
                        "Z_analytic [veh h]": cmp.Z_analytic, "Z_oracle [veh h]": cmp.Z_oracle,
                        "rel_gap": cmp.rel_gap, "bound": float(bound), "lipschitz_ratio": cmp.lipschitz,
                        "band_error [cells]": cmp.band_error_cells, "contiguous": cmp.contiguous,
                        "verdict": "pass" if ok else "fail",
                    }))
                    _write_oracle(out, oracle_sol, grid)
        except PreconditionError as exc:
            print(f"precondition failure: {exc}", file=sys.stderr)
            return RunResult(EXIT_PRECONDITION, family, verdict="precondition", error=str(exc))
        except DTCEError as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            return RunResult(EXIT_PRECONDITION, family, verdict="precondition", error=str(exc))
    notes += [str(w.message) for w in caught]
    verdict_ok &= report.passed
    if verify:
        (out / "verification.yaml").write_text(dump_yaml(report.to_dict()))
    summary["verdict"] = "pass" if verdict_ok else "fail"
    if gap is not None:
        summary["oracle_rel_gap"] = gap
    if not report.passed:
        summary["failed_checks"] = report.failures
    summary["notes"] = notes
    (out / "result.yaml").write_text(dump_yaml(summary))
    timings["total"] = time.perf_counter() - t0
    (out / "metadata.yaml").write_text(dump_yaml({
        "dtce": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "timings [s]": {k: float(v) for k, v in timings.items()},
    }))
    print(f"{path.name}: family={family} Z={Z:.10g} verdict={'pass' if verdict_ok else 'fail'}", file=stream)
    if "s0 [h]" in summary:
        bps = ", ".join(f"{x:.10g}" for x in sol.breakpoints["s"][1:])
        print(f"  s0={summary['s0 [h]']:.10g} breakpoints=({bps})", file=stream)
    if gap is not None:
        print(f"  oracle relative gap={gap:.3e} (bound {bound:.3e})", file=stream)
    if not report.passed:
        print(f"  failed checks: {', '.join(report.failures)}", file=stream)
    return RunResult(EXIT_OK if verdict_ok else EXIT_VERIFY, family, Z, gap, summary["verdict"])


def _out_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else Path("out")


def _batch_job(args):
    path, out_root, kw = args
    buf = _io.StringIO()
    res = run_scenario(path, out_root, stream=buf, **kw)
    return res, buf.getvalue()


def run_batch(directory: Path, out_root: Path, jobs: int = 1, **kw) -> int:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix in (".yaml", ".yml")) if Path(directory).is_dir() else None
    if files is None:
        print(f"not a directory: {directory}", file=sys.stderr)
        return EXIT_VALIDATION
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [(p, out_root, kw) for p in files]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_batch_job, tasks))
    else:
        results = [_batch_job(t) for t in tasks]
    rows = []
    for p, (res, text) in zip(files, results):
        sys.stdout.write(text)
        rows.append((p.name, res.family, res.Z, res.gap, res.verdict, res.exit_code, res.error))
    write_csv(out_root / "summary.csv",
              ["file", "family", "Z [veh h]", "rel_gap", "verdict", "exit_code", "error"], rows)
    failed = sum(1 for r in rows if r[5] != EXIT_OK)
    print(f"{len(rows)} scenario(s), {failed} failed; summary in {out_root / 'summary.csv'}")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtce", description="Bottleneck departure-time-choice equilibrium solver")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--oracle", action="store_true", help="also solve the discretized LP and compare")
        p.add_argument("--verify", action="store_true", help="write the verification report")
        p.add_argument("--curves", action="store_true", help="write u(s), departure and arrival curves")
        p.add_argument("--tol", type=float, default=None, help="bound on the analytic/oracle relative objective gap")
        p.add_argument("--grid-cells", type=int, default=None, help="override the scenario grid cell count")
        p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")

    p_run = sub.add_parser("run", help="solve one scenario file")
    p_run.add_argument("scenario", type=Path)
    common(p_run)
    p_batch = sub.add_parser("batch", help="solve every scenario file in a directory")
    p_batch.add_argument("directory", type=Path)
    p_batch.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common(p_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.grid_cells is not None and args.grid_cells < 1:
        print("--grid-cells must be positive", file=sys.stderr)
        return EXIT_VALIDATION
    kw = dict(oracle=args.oracle, verify=args.verify, curves=args.curves, tol=args.tol, grid_cells=args.grid_cells)
    out_root = _out_root(args.out)
    if args.command == "run":
        return run_scenario(args.scenario, out_root, **kw).exit_code
    return run_batch(args.directory, out_root, jobs=args.jobs, **kw)


if __name__ == "__main__":
    sys.exit(main())
