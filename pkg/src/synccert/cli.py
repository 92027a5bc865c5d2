"""Command-line entry point: ``synccert analyze | simulate | sweep``.

Exit codes: 0 verdict true (or sweep clean), 2 verdict false or a failed
simulation check, 1 on input or numerical error, 3 on a sweep disagreement.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import SyncCertError
from .pipeline import analyze, generate_instances, run_sweep, simulate_report
from .problem import ProblemSpec, load, parse_problem

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FALSE = 2
EXIT_DISAGREE = 3


def _clean(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(obj, out) -> None:
    out.write(json.dumps(_clean(obj), indent=2, sort_keys=True))
    out.write("\n")


def _load_spec(args) -> ProblemSpec:
    spec = load(args.spec)
    if args.alpha is not None:
        spec = ProblemSpec(spec.agent, spec.graph, args.alpha, spec.sim)
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, sim=replace(spec.sim, seed=args.seed, x0=None))
    return spec


def _write_mode_table(report: dict, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    conds = report["conditions"]
    w.writerow(["k", "lambda_re", "lambda_im", "margin", "complex", "real", "lyapunov", "frequency"])
    freq = conds.get("frequency", {}).get("verdict", "")
    for m in report["modes"]:
        w.writerow([
            m["k"], repr(m["lambda"][0]), repr(m["lambda"][1]), repr(m["margin"]),
            conds["complex"]["verdict"], conds["real"]["verdict"], conds["lyapunov"]["verdict"], freq,
        ])


def cmd_analyze(args, out) -> int:
    report = analyze(_load_spec(args))
    if args.format == "csv":
        _write_mode_table(report, out)
    else:
        _emit(report, out)
    return report["exit_status"]


def cmd_simulate(args, out) -> int:
    report, trace = simulate_report(_load_spec(args), exact=args.exact_propagator)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            trace.write_csv(fh)
        report["simulation"]["trace_file"] = str(args.trace)
    if args.format == "csv":
        trace.write_csv(out)
    else:
        _emit(report, out)
    return report["exit_status"]


def cmd_sweep(args, out) -> int:
    start = time.perf_counter()
    if args.replay:
        data = json.loads(Path(args.replay).read_text())
        items = data if isinstance(data, list) else [data]
        specs = [parse_problem(d.get("instance", d)) for d in items]
    else:
        if args.random < 1:
            raise SyncCertError("--random must be at least 1")
        specs = generate_instances(args.random, args.seed, args.nmax, args.sizemax)
    summary = run_sweep(specs, workers=args.workers)
    if args.dump and summary["failures"]:
        Path(args.dump).write_text(json.dumps(summary["failures"], indent=2, sort_keys=True) + "\n")
    _emit(summary, out)
    # timing goes to stderr so the summary itself stays byte-identical
    print(f"sweep: {len(specs)} instances in {time.perf_counter() - start:.2f} s", file=sys.stderr)
    return EXIT_DISAGREE if summary["disagreements"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synccert",
        description="Certify and simulate synchronization of identical LTI agents over a weighted digraph.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="spectrum, every condition and the global certificate")
    p.add_argument("spec", help="problem spec file (JSON)")
    p.add_argument("--alpha", type=float, help="override alpha_star from the problem file")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="analysis plus a simulated trace, rate fit and envelope checks")
    p.add_argument("spec", help="problem spec file (JSON)")
    p.add_argument("--alpha", type=float, help="override alpha_star from the problem file")
    p.add_argument("--trace", metavar="PATH", help="write the trace as CSV")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="json report, or the CSV trace on stdout")
    p.add_argument("--seed", type=int, help="draw x0 from this seed instead of the problem file")
    p.add_argument("--exact-propagator", action="store_true",
                   help="matrix exponential instead of RK4 in continuous time")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="cross-check all conditions on seeded random instances")
    p.add_argument("--random", type=int, default=50, metavar="COUNT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nmax", type=int, default=6, help="largest node count")
    p.add_argument("--sizemax", type=int, default=3, help="largest agent state dimension")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--replay", metavar="FILE", help="check instances from a dumped file instead")
    p.add_argument("--dump", metavar="FILE", help="write offending instances here")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (SyncCertError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
