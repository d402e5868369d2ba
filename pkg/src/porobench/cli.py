"""Command line entry point: ``porobench run`` and ``porobench list``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .bench import emit_report, export_fields, report_table, run_benchmark, stress_magnitude
from .linalg import export_matrix_market
from .parallel import ENV_THREADS
from .scenario import SHIPPED, ScenarioError, resolve_scenario


def _thread_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad thread list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="porobench", description="Coupled flow and geomechanics benchmark")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario over a thread sweep")
    r.add_argument("--scenario", required=True, help="scenario file or builtin:<name>")
    r.add_argument("--strategy", choices=("monolithic", "fixed-strain"), default=None,
                   help="defaults to the scenario's strategy")
    r.add_argument("--threads", type=_thread_list, default=None,
                   help=f"comma separated thread counts (default: ${ENV_THREADS} or 1)")
    r.add_argument("--repeat", type=int, default=1, help="runs per thread count (median timing)")
    r.add_argument("--out-dir", type=Path, default=Path("."))
    r.add_argument("--export-fields", action="store_true", help="write final fields as legacy VTK")
    r.add_argument("--export-matrix", action="store_true", help="write the last system in MatrixMarket")
    sub.add_parser("list", help="list built-in scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in SHIPPED:
            print(f"builtin:{name}")
        return 0
    threads = args.threads or [int(os.environ.get(ENV_THREADS, "1") or 1)]
    try:
        scenario = resolve_scenario(args.scenario)
    except (OSError, ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    strategy = args.strategy.replace("-", "_") if args.strategy else scenario.strategy
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    report, results = run_benchmark(scenario, strategy, threads, args.repeat)
    stem = f"{scenario.name}_{strategy}"
    emit_report(report, out / f"{stem}.csv", "csv")
    emit_report(report, out / f"{stem}.txt", "text")
    print(report_table(report), end="")
    res = results[0]
    if args.export_fields:
        path = export_fields(out / f"{stem}.vtk", res.mesh, res.final, stress_magnitude(res))
        print(f"fields: {path}")
    if args.export_matrix and res.last_system is not None:
        path = out / f"{stem}.mtx"
        export_matrix_market(path, res.last_system.A, comment=f"{scenario.name} last step, {strategy}")
        print(f"matrix: {path}")
    return 0 if report.converged else 1


if __name__ == "__main__":
    sys.exit(main())
