"""Command line interface: run experiments, compare traces, compute metrics.

Exit code of `run` is 0 iff every scenario-defined pass criterion holds.
The CPMSIM_LOG environment variable sets the log level (debug, info, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import external_client
from .runner import RunnerError, compare_traces, compute_metrics, read_trace, \
    run_experiment, trace_to_jsonl
from .scenario import FIXTURE_NAMES, ScenarioError, load_fixture, resolve_scenario
from .types import s_to_ns


def _setup_logging():
    level = os.environ.get("CPMSIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _cmd_run(args) -> int:
    spec = resolve_scenario(args.scenario)
    duration_ns = s_to_ns(args.duration) if args.duration is not None else None
    result = run_experiment(spec, seed=args.seed, duration_ns=duration_ns,
                            trace_path=args.trace,
                            external_listen=args.external_listen)
    if args.jsonl:
        trace_to_jsonl(result.trace, args.jsonl)
    if args.metrics:
        from .report import write_metrics_csv
        write_metrics_csv(result.metrics, args.metrics)
    if args.report:
        from .report import write_report
        files = write_report(result.trace, result.metrics, args.report)
        for f in files:
            print(f"wrote {f}")
    from .report import format_metrics
    print(format_metrics(result.metrics))
    for req, actual, ok in result.requirements:
        verdict = "pass" if ok else "FAIL"
        print(f"require {req}: actual {actual:.6g} -> {verdict}")
    if not result.requirements:
        return 0
    return 0 if result.passed else 1


def _cmd_compare(args) -> int:
    a = read_trace(args.a)
    b = read_trace(args.b)
    div = compare_traces(a, b)
    if div is None:
        print("equal")
        return 0
    print(str(div))
    return 1


def _cmd_metrics(args) -> int:
    trace = read_trace(args.trace)
    spec = None
    if trace.header.name in FIXTURE_NAMES:
        try:
            spec = load_fixture(trace.header.name)
        except ScenarioError:
            spec = None
    metrics = compute_metrics(trace, spec)
    from .report import format_metrics
    print(format_metrics(metrics))
    if args.report:
        from .report import write_report
        for f in write_report(trace, metrics, args.report):
            print(f"wrote {f}")
    if args.jsonl:
        trace_to_jsonl(trace, args.jsonl)
        print(f"wrote {args.jsonl}")
    return 0


def _cmd_fixtures(args) -> int:
    if args.action == "list":
        for name in FIXTURE_NAMES:
            print(name)
        return 0
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpmsim",
        description="deterministic connected-vehicle testbed simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("scenario", help="fixture name or scenario file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--duration", type=float, default=None, metavar="S",
                       help="override the duration (seconds)")
    p_run.add_argument("--trace", default=None, metavar="PATH",
                       help="write the binary trace here")
    p_run.add_argument("--metrics", default=None, metavar="PATH",
                       help="write metrics as CSV")
    p_run.add_argument("--report", default=None, metavar="DIR",
                       help="write figures and metrics.csv into DIR")
    p_run.add_argument("--jsonl", default=None, metavar="PATH",
                       help="write the trace as JSON lines")
    p_run.add_argument("--external-listen", default=None, metavar="ADDR",
                       help="host:port for external vehicle clients")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="compare two traces bit-exactly")
    p_cmp.add_argument("a")
    p_cmp.add_argument("b")
    p_cmp.set_defaults(func=_cmd_compare)

    p_met = sub.add_parser("metrics", help="compute metrics from a trace")
    p_met.add_argument("trace")
    p_met.add_argument("--report", default=None, metavar="DIR")
    p_met.add_argument("--jsonl", default=None, metavar="PATH")
    p_met.set_defaults(func=_cmd_metrics)

    p_fix = sub.add_parser("fixtures", help="built-in scenarios")
    p_fix.add_argument("action", choices=["list"])
    p_fix.set_defaults(func=_cmd_fixtures)

    p_cli = sub.add_parser("client", help="reference external vehicle client")
    external_client.add_arguments(p_cli)
    p_cli.set_defaults(func=lambda args: external_client.run_client(
        args.connect, args.scenario, args.vehicles,
        seed=args.seed, leave_after=args.leave_after))
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, RunnerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
