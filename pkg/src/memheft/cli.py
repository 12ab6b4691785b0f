"""Command line entry point: ``memheft {schedule,simulate,generate,report}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import experiment
from .workflow import WorkflowError, dump_workflow, generate_synthetic, to_dot

EVICTIONS = {"largest": "largest_first", "smallest": "smallest_first"}


def _add_run_args(p: argparse.ArgumentParser, mode: str) -> None:
    p.add_argument("--workflow", action="append", required=True,
                   help="workflow file (.json/.dot) or gen:tasks=N,levels=L,fanout=F,seed=S; repeatable")
    p.add_argument("--cluster", default="default",
                   help="cluster JSON, or default / mem_constrained with optional :replication")
    p.add_argument("--algo", action="append", choices=experiment.ALGORITHMS,
                   help="algorithm to run; repeatable (default: all)")
    p.add_argument("--eviction", choices=sorted(EVICTIONS), default="largest")
    p.add_argument("--mode", choices=("static", "dynamic"), default=mode)
    p.add_argument("--std", type=float, default=0.10, help="relative std of deviations")
    p.add_argument("--deviate", default="work,mem", help="quantities to perturb, from work,mem,edge")
    p.add_argument("--seeds", type=int, default=1, help="repetitions in dynamic mode")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--mm-mode", choices=("auto", "exact", "heuristic"), default="auto")
    p.add_argument("--out", default=None, help="output directory")


def _config(args) -> experiment.ExperimentConfig:
    return experiment.ExperimentConfig(
        workflows=args.workflow,
        cluster=args.cluster,
        algorithms=args.algo or list(experiment.ALGORITHMS),
        eviction=EVICTIONS[args.eviction],
        mode=args.mode,
        deviation_std=args.std,
        deviation_targets=tuple(x for x in args.deviate.split(",") if x),
        seeds=args.seeds,
        seed_base=args.seed_base,
        out=args.out,
        mm_mode=args.mm_mode,
    )


def _print_rows(rows, columns) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([experiment._cell(row.get(c)) for c in columns])
    sys.stdout.write(buf.getvalue())


def cmd_run(args) -> int:
    cfg = _config(args)
    if cfg.mode == "static":
        rows = experiment.run_static(cfg)
        columns = experiment.STATIC_COLUMNS
    else:
        rows = experiment.run_dynamic(cfg)
        columns = experiment.DYNAMIC_COLUMNS
    if cfg.out is None:
        _print_rows(rows, columns)
    else:
        print(f"wrote {len(rows)} rows to {Path(cfg.out) / 'results.csv'}")
    return 0


def cmd_generate(args) -> int:
    ranges = {}
    for key in ("work", "mem", "edge"):
        value = getattr(args, key)
        if value:
            lo, hi = value.split("-")
            ranges[key] = (int(float(lo)), int(float(hi)))
    w = generate_synthetic(args.tasks, args.levels, args.fanout, ranges, args.seed)
    if args.out is None:
        sys.stdout.write(to_dot(w))
    elif args.out.endswith((".dot", ".gv")):
        Path(args.out).write_text(to_dot(w))
    else:
        dump_workflow(w, args.out)
    return 0


def cmd_report(args) -> int:
    rows = experiment.read_results(args.results)
    summary = experiment.report(rows)
    text = experiment.format_summary(summary)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memheft", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="build and validate static schedules")
    _add_run_args(p, "static")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="execute schedules under runtime deviations")
    _add_run_args(p, "dynamic")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("generate", help="write a synthetic layered workflow")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--fanout", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--work", help="lo-hi range of task work")
    p.add_argument("--mem", help="lo-hi range of task memory in bytes")
    p.add_argument("--edge", help="lo-hi range of edge sizes in bytes")
    p.add_argument("--out", help=".json or .dot path (default: DOT on stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="summarise results by size class and algorithm")
    p.add_argument("results", help="results directory or results.jsonl")
    p.add_argument("--out", help="also write the summary to this file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (experiment.ConfigError, WorkflowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
