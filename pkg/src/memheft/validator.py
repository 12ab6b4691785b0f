"""Independent replay of a schedule against the workflow and cluster.

This module deliberately shares no bookkeeping code with the scheduler:
memory is replayed from the schedule entries alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .cluster import Cluster
from .scheduler import Schedule
from .workflow import Workflow

KINDS = ("precedence", "memory_exceeded", "buffer_exceeded", "missing_task", "unknown_processor")

_REL_TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    kind: str
    task: int
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    peak_usage: dict[int, float] = field(default_factory=dict)  # proc -> peak / memory

    @property
    def valid(self) -> bool:
        return not self.violations

    def first(self, kind: str):
        return next((v for v in self.violations if v.kind == kind), None)

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "violations": [{"kind": v.kind, "task": v.task, "detail": v.detail} for v in self.violations],
            "peak_usage": {str(p): self.peak_usage[p] for p in sorted(self.peak_usage)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _earlier(a: float, b: float) -> bool:
    """``a`` is meaningfully earlier than ``b``."""
    return a < b - _REL_TOL * max(1.0, abs(b))


def validate(s: Schedule, w: Workflow, c: Cluster) -> ValidationReport:
    report = ValidationReport()
    bad = report.violations
    k = len(c.processors)
    bw = c.bandwidth

    seen: dict[int, object] = {}
    for e in s.entries:
        if not 0 <= e.task < len(w):
            bad.append(Violation("missing_task", e.task, "entry for a task not in the workflow"))
        elif e.task in seen:
            bad.append(Violation("missing_task", e.task, "task scheduled twice"))
        else:
            seen[e.task] = e
    for u in range(len(w)):
        if u not in seen:
            bad.append(Violation("missing_task", u, "task never scheduled"))

    in_memory = [dict() for _ in range(k)]  # files resident per processor
    in_buffer = [dict() for _ in range(k)]
    mem_used = [0] * k
    buf_used = [0] * k
    peak = {}
    last_finish = [0.0] * k
    where: dict[int, tuple[int, float]] = {}  # task -> (proc, finish)

    for e in s.entries:
        v, p = e.task, e.proc
        if not 0 <= v < len(w) or seen.get(v) is not e:
            continue
        if not 0 <= p < k:
            bad.append(Violation("unknown_processor", v, f"processor {p} does not exist"))
            continue
        cap_mem = c.processors[p].memory
        cap_buf = c.processors[p].buffer

        # timing
        if _earlier(e.start, last_finish[p]):
            bad.append(Violation("precedence", v, f"starts at {e.start} while processor {p} busy until {last_finish[p]}"))
        duration = w.tasks[v].work / c.processors[p].speed
        if _earlier(e.finish - e.start, duration):
            bad.append(Violation("precedence", v, f"runs {e.finish - e.start}s, needs {duration}s"))
        for u in w.parents[v]:
            if u not in where:
                bad.append(Violation("precedence", v, f"parent {u} not scheduled before it"))
                continue
            pu, fu = where[u]
            ready = fu if pu == p else fu + w.edge_size[(u, v)] / bw
            if _earlier(e.start, ready):
                bad.append(Violation("precedence", v, f"starts at {e.start} before input from {u} at {ready}"))

        # evictions into the buffer
        for src, dst, _size in e.evicted:
            f = (src, dst)
            if f not in in_memory[p]:
                bad.append(Violation("precedence", v, f"evicts file {f} not resident on processor {p}"))
                continue
            sz = in_memory[p].pop(f)
            mem_used[p] -= sz
            in_buffer[p][f] = sz
            buf_used[p] += sz
        if buf_used[p] > cap_buf:
            bad.append(Violation("buffer_exceeded", v, f"buffer of processor {p} holds {buf_used[p]} > {cap_buf}"))

        # transient usage while v runs
        remote_in = 0
        for u in w.parents[v]:
            f = (u, v)
            if u in where and where[u][0] == p:
                if f not in in_memory[p]:
                    bad.append(Violation("precedence", v, f"input {f} no longer in memory of processor {p}"))
            else:
                remote_in += w.edge_size[f]
        outputs = sum(w.edge_size[(v, x)] for x in w.children[v])
        usage = mem_used[p] + w.tasks[v].mem + remote_in + outputs
        peak[p] = max(peak.get(p, 0), usage)
        if usage > cap_mem:
            bad.append(Violation("memory_exceeded", v, f"needs {usage} bytes on processor {p} with {cap_mem}"))

        # inputs consumed, outputs become resident
        for u in w.parents[v]:
            f = (u, v)
            if u not in where:
                continue
            q = where[u][0]
            if f in in_memory[q]:
                mem_used[q] -= in_memory[q].pop(f)
            elif f in in_buffer[q]:
                buf_used[q] -= in_buffer[q].pop(f)
        for x in w.children[v]:
            in_memory[p][(v, x)] = w.edge_size[(v, x)]
            mem_used[p] += w.edge_size[(v, x)]
        peak[p] = max(peak[p], mem_used[p])

        where[v] = (p, e.finish)
        last_finish[p] = max(last_finish[p], e.finish)

    report.peak_usage = {p: peak[p] / c.processors[p].memory for p in sorted(peak)}
    return report


def makespan(s: Schedule) -> float:
    return max((e.finish for e in s.entries), default=0.0)


def memory_usage(s: Schedule, w: Workflow, c: Cluster, report: ValidationReport | None = None) -> float:
    """Mean, over processors running at least one task, of peak usage / memory."""
    if report is None:
        report = validate(s, w, c)
    if not report.peak_usage:
        return 0.0
    return sum(report.peak_usage.values()) / len(report.peak_usage)
