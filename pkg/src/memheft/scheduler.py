"""Second scheduling stage: HEFT and memory-aware HEFT (HEFTM) processor assignment.

HEFTM tentatively places each task on every processor, checks that the
task's inputs, own memory and outputs fit (evicting pending files into
the communication buffer if needed), and commits the placement with the
earliest finish time.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .cluster import Cluster
from .ranking import RankPolicy, RankTable, bottom_level, rank_tasks
from .workflow import Workflow

INF = math.inf


class EvictionPolicy(str, enum.Enum):
    LARGEST_FIRST = "largest_first"
    SMALLEST_FIRST = "smallest_first"


class ConservationError(AssertionError):
    """Bookkeeping no longer balances; always a bug."""


class SchedulingFailure(Exception):
    """No processor can host ``task``; ``reasons`` maps processor id to why."""

    def __init__(self, task: int, reasons: dict[int, str]):
        self.task = task
        self.reasons = reasons
        summary = ", ".join(f"{p}:{r}" for p, r in sorted(reasons.items())[:6])
        super().__init__(f"task {task} cannot be placed on any processor ({summary})")


@dataclass
class SchedulerState:
    """Mutable bookkeeping of one scheduling run.

    ``pending[j]`` holds the files resident in processor j's memory and
    ``buffer_pending[j]`` the files evicted to its communication buffer,
    both as ``{(src, dst): size}``.
    """

    memory: list[int]
    buffer: list[int]
    rt: list[float]
    link_rt: list[list[float]]
    avail_mem: list[int]
    avail_buf: list[int]
    pending: list[dict]
    buffer_pending: list[dict]
    proc_of: list[int]
    start: list[float]
    ft: list[float]
    tasks_on: list[list[int]]
    _sorted: list = field(default_factory=list, repr=False)

    @classmethod
    def initial(cls, cluster: Cluster, n_tasks: int) -> "SchedulerState":
        k = len(cluster)
        mem = [p.memory for p in cluster.processors]
        buf = [p.buffer for p in cluster.processors]
        return cls(
            memory=mem,
            buffer=buf,
            rt=[0.0] * k,
            link_rt=[[0.0] * k for _ in range(k)],
            avail_mem=list(mem),
            avail_buf=list(buf),
            pending=[{} for _ in range(k)],
            buffer_pending=[{} for _ in range(k)],
            proc_of=[-1] * n_tasks,
            start=[INF] * n_tasks,
            ft=[INF] * n_tasks,
            tasks_on=[[] for _ in range(k)],
            _sorted=[None] * k,
        )

    def copy(self) -> "SchedulerState":
        return SchedulerState(
            memory=list(self.memory),
            buffer=list(self.buffer),
            rt=list(self.rt),
            link_rt=[list(row) for row in self.link_rt],
            avail_mem=list(self.avail_mem),
            avail_buf=list(self.avail_buf),
            pending=[dict(d) for d in self.pending],
            buffer_pending=[dict(d) for d in self.buffer_pending],
            proc_of=list(self.proc_of),
            start=list(self.start),
            ft=list(self.ft),
            tasks_on=[list(t) for t in self.tasks_on],
            _sorted=[None] * len(self.rt),
        )

    def placed(self, u: int) -> bool:
        return self.proc_of[u] >= 0

    def touch(self, j: int) -> None:
        self._sorted[j] = None

    def sorted_pending(self, j: int, policy: EvictionPolicy) -> list:
        cached = self._sorted[j]
        if cached is None or cached[0] is not policy:
            items = list(self.pending[j].items())
            if policy is EvictionPolicy.LARGEST_FIRST:
                items.sort(key=lambda kv: (-kv[1], kv[0]))
            else:
                items.sort(key=lambda kv: (kv[1], kv[0]))
            cached = (policy, items)
            self._sorted[j] = cached
        return cached[1]

    def check_conservation(self, procs=None) -> None:
        for j in range(len(self.rt)) if procs is None else procs:
            held = sum(self.pending[j].values())
            if self.avail_mem[j] + held != self.memory[j]:
                raise ConservationError(
                    f"processor {j}: availM {self.avail_mem[j]} + pending {held} != {self.memory[j]}"
                )
            if not 0 <= self.avail_mem[j] <= self.memory[j]:
                raise ConservationError(f"processor {j}: availM {self.avail_mem[j]} out of range")
            held = sum(self.buffer_pending[j].values())
            if self.avail_buf[j] + held != self.buffer[j]:
                raise ConservationError(
                    f"processor {j}: availC {self.avail_buf[j]} + buffered {held} != {self.buffer[j]}"
                )
            if not 0 <= self.avail_buf[j] <= self.buffer[j]:
                raise ConservationError(f"processor {j}: availC {self.avail_buf[j]} out of range")


@dataclass(frozen=True)
class Candidate:
    task: int
    proc: int
    start: float
    finish: float
    evictions: tuple = ()
    feasible: bool = True
    reason: str = ""


@dataclass(frozen=True)
class ScheduleEntry:
    task: int
    proc: int
    start: float
    finish: float
    evicted: tuple = ()  # ((src, dst, size), ...)


@dataclass(frozen=True)
class Schedule:
    entries: tuple[ScheduleEntry, ...]

    @property
    def makespan(self) -> float:
        return max((e.finish for e in self.entries), default=0.0)

    def placement(self) -> dict[int, int]:
        return {e.task: e.proc for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "task": e.task,
                    "proc": e.proc,
                    "start": e.start,
                    "finish": e.finish,
                    "evicted": [{"src": s, "dst": d, "size": c} for s, d, c in e.evicted],
                }
                for e in self.entries
            ],
            "makespan": self.makespan,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        return cls(
            tuple(
                ScheduleEntry(
                    int(e["task"]),
                    int(e["proc"]),
                    float(e["start"]),
                    float(e["finish"]),
                    tuple((int(f["src"]), int(f["dst"]), int(f["size"])) for f in e.get("evicted", ())),
                )
                for e in data["entries"]
            )
        )

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Schedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- memory checks -----------------------------------------------------------


def compute_res(v: int, p: int, state: SchedulerState, w: Workflow) -> int:
    """Memory slack of running ``v`` on ``p``; negative means files must be evicted."""
    remote_in = sum(w.edge_size[(u, v)] for u in w.parents[v] if state.proc_of[u] != p)
    return state.avail_mem[p] - w.tasks[v].mem - remote_in - w.out_size(v)


def _plan(deficit, p, state, policy, protected):
    # -> (evicted keys, "") or (None, reason)
    if state.memory[p] - state.avail_mem[p] < deficit:
        return None, "memory"
    chosen, total = [], 0
    for key, size in state.sorted_pending(p, policy):
        if key in protected:
            continue
        chosen.append(key)
        total += size
        if total > state.avail_buf[p]:
            return None, "buffer"
        if total >= deficit:
            return tuple(chosen), ""
    return None, "memory"


def plan_evictions(
    deficit: int,
    p: int,
    state: SchedulerState,
    policy: EvictionPolicy = EvictionPolicy.LARGEST_FIRST,
    protected=frozenset(),
):
    """Shortest policy-ordered prefix of p's pending files freeing ``deficit`` bytes.

    Returns the list of ``(src, dst)`` keys, or ``None`` if memory cannot be
    freed or the files do not fit in the available buffer.
    """
    keys, _ = _plan(deficit, p, state, EvictionPolicy(policy), protected)
    return None if keys is None else list(keys)


class _TaskContext:
    """Per-task quantities shared by the tentative placements on all processors."""

    __slots__ = ("v", "mem", "work", "out", "in_total", "local_in", "protected", "missing", "groups")

    def __init__(self, v: int, w: Workflow, state: SchedulerState, bandwidth: float):
        self.v = v
        t = w.tasks[v]
        self.mem = t.mem
        self.work = t.work
        self.out = w.out_size(v)
        size = w.edge_size
        local_in: dict[int, int] = {}
        protected: dict[int, set] = {}
        missing = set()
        groups: dict[int, list] = {}
        total = 0
        proc_of, ft, pending = state.proc_of, state.ft, state.pending
        for u in w.parents[v]:
            q = proc_of[u]
            if q < 0:
                raise ValueError(f"parent {u} of task {v} is not placed yet")
            key = (u, v)
            c = size[key]
            total += c
            local_in[q] = local_in.get(q, 0) + c
            protected.setdefault(q, set()).add(key)
            if key not in pending[q]:
                missing.add(q)
            comm = c / bandwidth
            arrival = ft[u] + comm
            g = groups.get(q)
            if g is None:
                groups[q] = [arrival, comm]
            else:
                if arrival > g[0]:
                    g[0] = arrival
                if comm > g[1]:
                    g[1] = comm
        self.in_total = total
        self.local_in = local_in
        self.protected = protected
        self.missing = missing
        self.groups = groups


def _evaluate(ctx: _TaskContext, p: int, state: SchedulerState, speed: float, policy):
    # -> (finish, start, evictions, reason); finish is INF when infeasible
    if p in ctx.missing:
        return INF, INF, (), "input_evicted"
    res = state.avail_mem[p] - ctx.mem - (ctx.in_total - ctx.local_in.get(p, 0)) - ctx.out
    evictions = ()
    if res < 0:
        evictions, reason = _plan(-res, p, state, policy, ctx.protected.get(p, ()))
        if evictions is None:
            return INF, INF, (), reason
    st = state.rt[p]
    link = state.link_rt
    for q, (arrival, comm) in ctx.groups.items():
        if q == p:
            continue
        if arrival > st:
            st = arrival
        b = link[q][p] + comm
        if b > st:
            st = b
    return st + ctx.work / speed, st, evictions, ""


def tentative_assign(
    v: int,
    p: int,
    state: SchedulerState,
    w: Workflow,
    cluster: Cluster,
    policy: EvictionPolicy = EvictionPolicy.LARGEST_FIRST,
) -> Candidate:
    """Evaluate placing ``v`` on ``p`` without touching ``state``."""
    ctx = _TaskContext(v, w, state, cluster.bandwidth)
    finish, start, evictions, reason = _evaluate(
        ctx, p, state, cluster.processors[p].speed, EvictionPolicy(policy)
    )
    return Candidate(v, p, start, finish, evictions, finish != INF, reason)


def commit_assign(
    cand: Candidate, state: SchedulerState, w: Workflow, cluster: Cluster, check: bool = False
) -> SchedulerState:
    """Apply a feasible placement to ``state`` in place (and return it)."""
    if not cand.feasible:
        raise ValueError(f"cannot commit infeasible placement of task {cand.task}")
    v, p = cand.task, cand.proc
    bw = cluster.bandwidth
    pending, buffered = state.pending, state.buffer_pending
    avail_mem, avail_buf = state.avail_mem, state.avail_buf
    touched = {p}
    for key in cand.evictions:
        size = pending[p].pop(key)
        buffered[p][key] = size
        avail_mem[p] += size
        avail_buf[p] -= size
    for u in w.parents[v]:
        q = state.proc_of[u]
        key = (u, v)
        if q == p:
            avail_mem[p] += pending[p].pop(key)
        else:
            touched.add(q)
            if key in pending[q]:
                avail_mem[q] += pending[q].pop(key)
            else:
                avail_buf[q] += buffered[q].pop(key)
            state.link_rt[q][p] += w.edge_size[key] / bw
    for x in w.children[v]:
        key = (v, x)
        size = w.edge_size[key]
        pending[p][key] = size
        avail_mem[p] -= size
    state.rt[p] = cand.finish
    state.proc_of[v] = p
    state.start[v] = cand.start
    state.ft[v] = cand.finish
    state.tasks_on[p].append(v)
    for j in touched:
        state._sorted[j] = None
    if check:
        state.check_conservation(touched)
    return state


def assign_in_order(
    w: Workflow,
    cluster: Cluster,
    order,
    state: SchedulerState,
    policy: EvictionPolicy = EvictionPolicy.LARGEST_FIRST,
    check: bool = False,
) -> list[ScheduleEntry]:
    """Greedy HEFTM placement of ``order`` starting from ``state`` (mutated)."""
    policy = EvictionPolicy(policy)
    speeds = [p.speed for p in cluster.processors]
    k = len(speeds)
    bw = cluster.bandwidth
    entries = []
    for v in order:
        ctx = _TaskContext(v, w, state, bw)
        best = None
        best_p = -1
        for p in range(k):
            res = _evaluate(ctx, p, state, speeds[p], policy)
            if res[0] != INF and (best is None or res[0] < best[0]):
                best, best_p = res, p
        if best is None:
            reasons = {p: _evaluate(ctx, p, state, speeds[p], policy)[3] for p in range(k)}
            raise SchedulingFailure(v, reasons)
        finish, start, evictions, _ = best
        evicted = tuple((s, d, state.pending[best_p][(s, d)]) for s, d in evictions)
        commit_assign(Candidate(v, best_p, start, finish, evictions), state, w, cluster, check)
        entries.append(ScheduleEntry(v, best_p, start, finish, evicted))
    return entries


def heftm_schedule(
    w: Workflow,
    cluster: Cluster,
    policy: RankPolicy | str = RankPolicy.BL,
    eviction: EvictionPolicy | str = EvictionPolicy.LARGEST_FIRST,
    ranks: RankTable | None = None,
    check: bool = False,
) -> Schedule:
    """Memory-aware HEFT. Raises :class:`SchedulingFailure` if some task fits nowhere."""
    if ranks is None:
        ranks = rank_tasks(w, policy)
    state = SchedulerState.initial(cluster, len(w))
    return Schedule(tuple(assign_in_order(w, cluster, ranks.order, state, eviction, check)))


# -- baseline ---------------------------------------------------------------------


def heft_assign_in_order(w: Workflow, cluster: Cluster, order, state: SchedulerState) -> list[ScheduleEntry]:
    """Memory-oblivious earliest-finish-time placement; only times are tracked."""
    speeds = [p.speed for p in cluster.processors]
    k = len(speeds)
    bw = cluster.bandwidth
    size = w.edge_size
    rt, link, ft, proc_of = state.rt, state.link_rt, state.ft, state.proc_of
    entries = []
    for v in order:
        parents = [(u, proc_of[u], ft[u], size[(u, v)] / bw) for u in w.parents[v]]
        work = w.tasks[v].work
        best_ft, best_st, best_p = INF, INF, -1
        for p in range(k):
            st = rt[p]
            for _, q, fu, comm in parents:
                if q == p:
                    comm = 0.0
                a = fu + comm
                b = link[q][p] + comm
                if a > st:
                    st = a
                if b > st:
                    st = b
            f = st + work / speeds[p]
            if f < best_ft:
                best_ft, best_st, best_p = f, st, p
        rt[best_p] = best_ft
        for u, q, _, comm in parents:
            if q != best_p:
                link[q][best_p] += comm
        proc_of[v] = best_p
        state.start[v] = best_st
        ft[v] = best_ft
        state.tasks_on[best_p].append(v)
        entries.append(ScheduleEntry(v, best_p, best_st, best_ft))
    return entries


def heft_schedule(w: Workflow, cluster: Cluster, ranks: RankTable | None = None) -> Schedule:
    """Classic HEFT on bottom-level ranks; the result may violate memory limits."""
    if ranks is None:
        ranks = bottom_level(w)
    state = SchedulerState.initial(cluster, len(w))
    return Schedule(tuple(heft_assign_in_order(w, cluster, ranks.order, state)))
