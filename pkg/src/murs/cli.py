"""Command-line experiment runner.

Subcommands:

* ``run`` - execute a scenario (built-in name or YAML file) under one or
  more scheduler policies and write reports.
* ``compare`` - print the headline deltas between two report files.
* ``list-scenarios`` - show the built-in scenarios and their jobs.

Exit code 0 covers completed experiments including out-of-memory outcomes;
configuration errors exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .sched import Policy
from .workloads import ConfigError, builtin_scenarios


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="murs",
        description="Key-value dataflow simulator with memory-usage-rate scheduling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario under one or more policies")
    run_p.add_argument(
        "--scenario", required=True,
        help="built-in scenario name or path to a scenario YAML file",
    )
    run_p.add_argument(
        "--policy", nargs="+", default=["murs", "fair"],
        choices=[p.value for p in Policy],
        help="scheduler policies to run (one report each)",
    )
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--out", default="reports", help="output directory for reports")
    run_p.add_argument(
        "--heap-bytes", type=int, default=None, help="override the modeled heap size"
    )
    run_p.add_argument("--yellow", type=float, default=None, help="override the yellow threshold")
    run_p.add_argument("--red", type=float, default=None, help="override the red threshold")

    cmp_p = sub.add_parser("compare", help="compare two report files (B relative to A)")
    cmp_p.add_argument("report_a")
    cmp_p.add_argument("report_b")
    cmp_p.add_argument("--json", action="store_true", help="emit the summary as JSON")

    sub.add_parser("list-scenarios", help="list built-in scenarios")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    policies = [Policy(p) for p in args.policy]
    reports = harness.run(
        args.scenario,
        policies,
        out_dir=args.out,
        seed=args.seed,
        heap_bytes=args.heap_bytes,
        yellow=args.yellow,
        red=args.red,
    )
    for policy_name, report in reports.items():
        outcome = report["outcome"]
        status = "OME" if outcome["ome"] else "completed"
        print(
            f"{report['scenario']} [{policy_name}] {status}: "
            f"virtual time {outcome['total_virtual_ns']} ns, "
            f"gc pause {outcome['cumulative_gc_pause_ns']} ns, "
            f"spills {outcome['total_spills']}, "
            f"suspensions {outcome['suspension_count']}"
        )
        base = f"{args.out}/report-{report['scenario']}-{policy_name}"
        print(f"  report: {base}.json")
        print(f"  tasks:  {base}-tasks.csv")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    summary = harness.compare(
        harness.load_report(args.report_a), harness.load_report(args.report_b)
    )
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    a, b = summary["a"], summary["b"]
    print(f"A: {a['scenario']} [{a['policy']}]   B: {b['scenario']} [{b['policy']}]")
    rows = [
        ("total time reduction", summary["total_time_reduction_pct"]),
        ("gc pause reduction", summary["gc_pause_reduction_pct"]),
        ("spill tasks reduction", summary["spill_tasks_reduction_pct"]),
        ("spills reduction", summary["spills_reduction_pct"]),
        ("spilled bytes reduction", summary["spilled_bytes_reduction_pct"]),
    ]
    for label, value in rows:
        print(f"  {label:>24}: {value:8.2f}%")
    for job, value in sorted(summary["job_time_reduction_pct"].items()):
        print(f"  {job + ' time reduction':>24}: {value:8.2f}%")
    print(f"  {'OME':>24}: A={summary['ome_a']} B={summary['ome_b']}")
    if summary["scalability_win"]:
        print("  B completes where A runs out of memory (scalability win)")
    return 0


def _cmd_list(_: argparse.Namespace) -> int:
    for name, scenario in sorted(builtin_scenarios().items()):
        jobs = ", ".join(sub.job.name for sub in scenario.jobs)
        heap_mb = scenario.heap.total_bytes / (1024 * 1024)
        print(f"{name:24} jobs: {jobs:24} heap: {heap_mb:.0f} MiB")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_list(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
