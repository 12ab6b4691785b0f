"""Batch experiments: static scheduling and dynamic execution over workflow suites."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cluster import Cluster, parse_cluster, reference_cluster
from .ranking import RankPolicy, rank_tasks
from .scheduler import EvictionPolicy, Schedule, SchedulingFailure, heft_schedule, heftm_schedule
from .simulator import DeviationModel, sample_actuals, simulate_no_recompute, simulate_with_recompute
from .validator import memory_usage, validate
from .workflow import Workflow, generate_synthetic, parse_workflow, size_class

log = logging.getLogger(__name__)

ALGORITHMS = ("HEFT", "HEFTM-BL", "HEFTM-BLC", "HEFTM-MM")
SIZE_ORDER = ("tiny", "small", "middle", "big")

STATIC_COLUMNS = (
    "workflow", "tasks", "size_class", "algorithm", "valid", "failure",
    "makespan", "relative_makespan", "heft_valid", "memory_usage",
)
DYNAMIC_COLUMNS = (
    "workflow", "tasks", "size_class", "algorithm", "seed", "static_valid",
    "norecompute_valid", "norecompute_makespan", "norecompute_failure",
    "recompute_valid", "recompute_makespan", "recompute_failure", "recompute_count", "improvement",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    workflows: list[str]
    cluster: str = "default"
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    eviction: str = "largest_first"
    mode: str = "static"
    deviation_std: float = 0.10
    deviation_targets: tuple = ("work", "mem")
    seeds: int = 1
    seed_base: int = 0
    out: str | None = None
    mm_mode: str = "auto"

    def check(self) -> None:
        if not self.workflows:
            raise ConfigError("at least one workflow is required")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        try:
            EvictionPolicy(self.eviction)
        except ValueError:
            raise ConfigError(f"unknown eviction policy {self.eviction!r}") from None


def load_workflow(source: str) -> tuple[str, Workflow]:
    """Resolve a workflow source: a .json/.dot path or ``gen:tasks=N,levels=L,fanout=F,seed=S``.

    Generator sources may also set ``mem=lo-hi``, ``work=lo-hi`` and ``edge=lo-hi``.
    """
    if source.startswith("gen:"):
        params = dict(kv.split("=", 1) for kv in source[4:].split(",") if kv)
        ranges = {}
        for key in ("work", "mem", "edge"):
            if key in params:
                lo, hi = params.pop(key).split("-")
                ranges[key] = (int(float(lo)), int(float(hi)))
        try:
            n = int(params.pop("tasks"))
            levels = int(params.pop("levels", max(1, round(math.sqrt(n)))))
            fanout = int(params.pop("fanout", 4))
            seed = int(params.pop("seed", 0))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad generator description {source!r}") from exc
        if params:
            raise ConfigError(f"unknown generator parameters {sorted(params)}")
        label = f"gen-n{n}-l{levels}-f{fanout}-s{seed}"
        return label, generate_synthetic(n, levels, fanout, ranges, seed)
    path = Path(source)
    return path.stem, parse_workflow(path)


def load_cluster(source: str) -> Cluster:
    """``default``/``mem_constrained`` with optional ``:replication``, or a JSON path."""
    kind, _, rep = source.partition(":")
    if kind in ("default", "mem_constrained"):
        return reference_cluster(kind, int(rep) if rep else 12)
    return parse_cluster(source)


def _policy(algorithm: str) -> RankPolicy | None:
    return None if algorithm == "HEFT" else RankPolicy(algorithm.split("-", 1)[1])


def _schedule(algorithm, w, c, eviction, mm_mode):
    """-> (schedule or None, failure text, wall seconds)"""
    t0 = time.perf_counter()
    policy = _policy(algorithm)
    try:
        if policy is None:
            s = heft_schedule(w, c)
        else:
            s = heftm_schedule(w, c, policy, eviction, ranks=rank_tasks(w, policy, mm_mode))
        failure = ""
    except SchedulingFailure as exc:
        s, failure = None, f"scheduling_failure:{exc.task}"
    return s, failure, time.perf_counter() - t0


def _prepare_out(cfg: ExperimentConfig):
    if cfg.out is None:
        return None
    out = Path(cfg.out)
    (out / "schedules").mkdir(parents=True, exist_ok=True)
    if cfg.mode == "dynamic":
        (out / "events").mkdir(parents=True, exist_ok=True)
    return out


def run_static(cfg: ExperimentConfig) -> list[dict]:
    cfg.check()
    c = load_cluster(cfg.cluster)
    out = _prepare_out(cfg)
    rows = []
    for source in cfg.workflows:
        label, w = load_workflow(source)
        heft, _, heft_time = _schedule("HEFT", w, c, cfg.eviction, cfg.mm_mode)
        heft_report = validate(heft, w, c)
        for algo in cfg.algorithms:
            if algo == "HEFT":
                s, failure, secs = heft, "", heft_time
            else:
                s, failure, secs = _schedule(algo, w, c, cfg.eviction, cfg.mm_mode)
            row = {
                "workflow": label,
                "tasks": len(w),
                "size_class": size_class(w),
                "algorithm": algo,
                "valid": False,
                "failure": failure,
                "makespan": None,
                "relative_makespan": None,
                "heft_valid": heft_report.valid,
                "memory_usage": None,
                "runtime_s": secs,
            }
            if s is not None:
                report = heft_report if algo == "HEFT" else validate(s, w, c)
                row["valid"] = report.valid
                if not report.valid:
                    first = report.violations[0]
                    row["failure"] = f"{first.kind}:{first.task}"
                row["makespan"] = s.makespan
                row["relative_makespan"] = s.makespan / heft.makespan if heft.makespan > 0 else 1.0
                row["memory_usage"] = memory_usage(s, w, c, report)
                if out is not None:
                    s.dump(out / "schedules" / f"{label}__{algo}.json")
            log.info("%s %s valid=%s makespan=%s", label, algo, row["valid"], row["makespan"])
            rows.append(row)
    if out is not None:
        write_results(rows, out, STATIC_COLUMNS)
    return rows


def run_dynamic(cfg: ExperimentConfig) -> list[dict]:
    cfg.check()
    c = load_cluster(cfg.cluster)
    out = _prepare_out(cfg)
    rows = []
    for source in cfg.workflows:
        label, w = load_workflow(source)
        initial = {algo: _schedule(algo, w, c, cfg.eviction, cfg.mm_mode) for algo in cfg.algorithms}
        for r in range(cfg.seeds):
            seed = cfg.seed_base + r
            actual = sample_actuals(w, DeviationModel(cfg.deviation_std, frozenset(cfg.deviation_targets), seed))
            for algo in cfg.algorithms:
                s, failure, _ = initial[algo]
                row = {
                    "workflow": label,
                    "tasks": len(w),
                    "size_class": size_class(w),
                    "algorithm": algo,
                    "seed": seed,
                    "static_valid": s is not None and validate(s, w, c).valid,
                    "norecompute_valid": False,
                    "norecompute_makespan": None,
                    "norecompute_failure": failure,
                    "recompute_valid": False,
                    "recompute_makespan": None,
                    "recompute_failure": failure,
                    "recompute_count": 0,
                    "improvement": None,
                }
                if s is not None:
                    fixed = simulate_no_recompute(s, w, c, actual)
                    dyn = simulate_with_recompute(
                        w, c, _policy(algo), cfg.eviction, actual, schedule=s, mm_mode=cfg.mm_mode
                    )
                    row.update(
                        norecompute_valid=fixed.valid,
                        norecompute_makespan=fixed.makespan if fixed.valid else None,
                        norecompute_failure=_failure_text(fixed),
                        recompute_valid=dyn.valid,
                        recompute_makespan=dyn.makespan if dyn.valid else None,
                        recompute_failure=_failure_text(dyn),
                        recompute_count=dyn.recompute_count,
                    )
                    if fixed.valid and dyn.valid and dyn.makespan > 0:
                        row["improvement"] = fixed.makespan / dyn.makespan - 1
                    if out is not None:
                        stem = f"{label}__{algo}__{seed}"
                        (out / "events" / f"{stem}__norecompute.jsonl").write_text(fixed.events_jsonl())
                        (out / "events" / f"{stem}__recompute.jsonl").write_text(dyn.events_jsonl())
                        if r == 0:
                            s.dump(out / "schedules" / f"{label}__{algo}.json")
                rows.append(row)
    if out is not None:
        write_results(rows, out, DYNAMIC_COLUMNS)
    return rows


def _failure_text(outcome) -> str:
    f = outcome.failure
    return "" if f is None else f"{f.cause}:{f.task}"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(rows: list[dict], out: Path, columns) -> None:
    """results.csv holds the deterministic columns; results.jsonl every field."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(col)) for col in columns])
    (out / "results.csv").write_text(buf.getvalue())
    with open(out / "results.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_results(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "results.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _geomean(values):
    values = [v for v in values if v is not None and v > 0]
    if not values:
        return None
    return math.exp(sum(math.log(v) for v in values) / len(values))


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def report(rows: list[dict]) -> list[dict]:
    """Aggregate result rows by size class and algorithm."""
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault((row["size_class"], row["algorithm"]), []).append(row)

    def order(key):
        sc, algo = key
        return (
            SIZE_ORDER.index(sc) if sc in SIZE_ORDER else len(SIZE_ORDER),
            ALGORITHMS.index(algo) if algo in ALGORITHMS else len(ALGORITHMS),
            algo,
        )

    summary = []
    for key in sorted(groups, key=order):
        members = groups[key]
        entry = {"size_class": key[0], "algorithm": key[1], "rows": len(members)}
        if "recompute_valid" in members[0]:
            entry.update(
                norecompute_success=sum(bool(r["norecompute_valid"]) for r in members) / len(members),
                recompute_success=sum(bool(r["recompute_valid"]) for r in members) / len(members),
                mean_improvement=_mean([r.get("improvement") for r in members]),
                mean_recomputes=_mean([r.get("recompute_count") for r in members]),
            )
        else:
            entry.update(
                success_rate=sum(bool(r["valid"]) for r in members) / len(members),
                geomean_relative_makespan=_geomean([r.get("relative_makespan") for r in members]),
                mean_memory_usage=_mean([r.get("memory_usage") for r in members]),
                mean_runtime_s=_mean([r.get("runtime_s") for r in members]),
            )
        summary.append(entry)
    return summary


def format_summary(summary: list[dict]) -> str:
    if not summary:
        return "(no results)\n"
    columns = list(summary[0].keys())
    lines = ["\t".join(columns)]
    for entry in summary:
        cells = []
        for col in columns:
            v = entry.get(col)
            cells.append("" if v is None else f"{v:.4g}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def load_schedule_artifact(out, label: str, algorithm: str) -> Schedule:
    return Schedule.load(Path(out) / "schedules" / f"{label}__{algorithm}.json")
