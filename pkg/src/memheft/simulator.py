"""Execution of schedules under perturbed task parameters.

Two runtime modes share the same accounting: memory effects are applied
in the plan's commit order (the order the scheduler reasoned in), while
start and finish times follow the actual durations.

* without recomputation the plan is followed as is: tasks never start
  before their planned time, wait for late predecessors or a busy
  processor, and the run stops at the first memory overflow;
* with recomputation the runtime reports deviations to the scheduler,
  which retraces the plan or reschedules all unstarted tasks.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cluster import Cluster
from .ranking import RankPolicy, bottom_level, rank_tasks
from .scheduler import (
    Candidate,
    EvictionPolicy,
    Schedule,
    ScheduleEntry,
    SchedulerState,
    SchedulingFailure,
    assign_in_order,
    commit_assign,
    compute_res,
    heft_assign_in_order,
    heft_schedule,
    heftm_schedule,
)
from .workflow import Workflow

EARLY_FINISH = 0.10
QUANTITIES = ("work", "mem", "edge")


@dataclass(frozen=True)
class DeviationModel:
    relative_std: float = 0.10
    targets: frozenset = frozenset({"work", "mem"})
    seed: int = 0
    clamp_floor: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        if self.relative_std < 0:
            raise ValueError("relative_std must be >= 0")
        if not self.clamp_floor > 0:
            raise ValueError("clamp_floor must be > 0")
        unknown = self.targets - set(QUANTITIES)
        if unknown:
            raise ValueError(f"unknown deviation targets {sorted(unknown)}")


@dataclass(frozen=True)
class ActualWeights:
    """Observed task and edge weights; may be partial (missing keys keep estimates)."""

    work: dict = field(default_factory=dict)
    mem: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)

    def apply(self, w: Workflow) -> Workflow:
        if not (self.work or self.mem or self.edges):
            return w
        return w.with_weights(work=self.work, mem=self.mem, edges=self.edges)

    @classmethod
    def estimates(cls, w: Workflow) -> "ActualWeights":
        return cls(
            {t.id: t.work for t in w.tasks},
            {t.id: t.mem for t in w.tasks},
            {(e.src, e.dst): e.size for e in w.edges},
        )


@dataclass(frozen=True)
class Failure:
    cause: str  # out_of_memory | buffer_overflow | scheduling_failure
    task: int
    time: float


@dataclass(frozen=True)
class SimEvent:
    t: float
    kind: str
    task: int
    proc: int


@dataclass
class SimOutcome:
    """Result of one simulated execution.

    For an invalid run ``makespan`` is the time at which execution stopped.
    """

    valid: bool
    makespan: float
    failure: Failure | None = None
    recompute_count: int = 0
    events: list[SimEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "makespan": self.makespan,
            "failure": None
            if self.failure is None
            else {"cause": self.failure.cause, "task": self.failure.task, "time": self.failure.time},
            "recompute_count": self.recompute_count,
            "events": len(self.events),
        }

    def events_jsonl(self) -> str:
        return "".join(
            json.dumps({"t": e.t, "kind": e.kind, "task": e.task, "proc": e.proc}) + "\n" for e in self.events
        )


def _perturb(estimate: int, z: float, d: DeviationModel) -> int:
    if estimate == 0:
        return 0
    floor = max(1, math.ceil(d.clamp_floor * estimate))
    return max(floor, int(round(estimate + d.relative_std * estimate * z)))


def sample_actuals(w: Workflow, d: DeviationModel) -> ActualWeights:
    """Normally distributed actual weights around the estimates.

    Task draws (work then memory, task by task) come first in the stream
    and edge draws after, so editing edges leaves task draws unchanged.
    """
    rng = np.random.default_rng(d.seed)
    z_tasks = rng.standard_normal((len(w), 2))
    z_edges = rng.standard_normal(len(w.edges))
    work, mem, edges = {}, {}, {}
    for t in w.tasks:
        work[t.id] = _perturb(t.work, z_tasks[t.id, 0], d) if "work" in d.targets else t.work
        mem[t.id] = _perturb(t.mem, z_tasks[t.id, 1], d) if "mem" in d.targets else t.mem
    for i, e in enumerate(w.edges):
        edges[(e.src, e.dst)] = _perturb(e.size, z_edges[i], d) if "edge" in d.targets else e.size
    return ActualWeights(work, mem, edges)


# -- shared helpers -----------------------------------------------------------------


def _evicted_keys(e: ScheduleEntry) -> tuple:
    return tuple((s, d) for s, d, _ in e.evicted)


def _fits(v: int, p: int, evictions, state: SchedulerState, w: Workflow) -> str:
    """'' if the planned placement still fits memory and buffer, else the failure cause."""
    for u in w.parents[v]:
        if state.proc_of[u] == p and (u, v) not in state.pending[p]:
            return "out_of_memory"
    freed = 0
    for key in evictions:
        if key not in state.pending[p] or key[1] == v:
            return "out_of_memory"
        freed += state.pending[p][key]
    if freed > state.avail_buf[p]:
        return "buffer_overflow"
    if compute_res(v, p, state, w) + freed < 0:
        return "out_of_memory"
    return ""


def _step3_start(v: int, p: int, state: SchedulerState, w: Workflow, bandwidth: float) -> float:
    st = state.rt[p]
    for u in w.parents[v]:
        q = state.proc_of[u]
        if q == p:
            continue
        t = max(state.ft[u], state.link_rt[q][p]) + w.edge_size[(u, v)] / bandwidth
        if t > st:
            st = t
    return st


def _sorted_events(events) -> list[SimEvent]:
    return [e for _, _, e in sorted((e.t, i, e) for i, e in enumerate(events))]


# -- without recomputation -----------------------------------------------------------


def simulate_no_recompute(s: Schedule, w: Workflow, c: Cluster, a: ActualWeights) -> SimOutcome:
    wa = a.apply(w)
    state = SchedulerState.initial(c, len(w))
    bw = c.bandwidth
    events = []
    for e in s.entries:
        v, p = e.task, e.proc
        start = max(e.start, _step3_start(v, p, state, wa, bw))
        evictions = _evicted_keys(e)
        cause = _fits(v, p, evictions, state, wa)
        if cause:
            events = [ev for ev in events if ev.t <= start]
            events.append(SimEvent(start, cause, v, p))
            return SimOutcome(False, start, Failure(cause, v, start), 0, _sorted_events(events))
        finish = start + wa.tasks[v].work / c.processors[p].speed
        commit_assign(Candidate(v, p, start, finish, evictions), state, wa, c)
        events.append(SimEvent(start, "start", v, p))
        events.append(SimEvent(finish, "finish", v, p))
    makespan = max((state.ft[e.task] for e in s.entries), default=0.0)
    return SimOutcome(True, makespan, None, 0, _sorted_events(events))


# -- retrace --------------------------------------------------------------------------


@dataclass
class RetraceResult:
    valid: bool
    new_ft: dict[int, float]
    reason: str | None = None
    task: int | None = None
    new_st: dict[int, float] = field(default_factory=dict)


def _retrace_entries(entries, state: SchedulerState, w: Workflow, c: Cluster) -> RetraceResult:
    # state is consumed
    bw = c.bandwidth
    new_st, new_ft = {}, {}
    for e in entries:
        v, p = e.task, e.proc
        evictions = _evicted_keys(e)
        # A placement planned without evictions must still need none; a
        # placement with evictions must still fit them into the buffer.
        cause = _fits(v, p, evictions, state, w)
        if cause:
            return RetraceResult(False, new_ft, cause, v, new_st)
        st = _step3_start(v, p, state, w, bw)
        ft = st + w.tasks[v].work / c.processors[p].speed
        commit_assign(Candidate(v, p, st, ft, evictions), state, w, c)
        new_st[v], new_ft[v] = st, ft
    return RetraceResult(True, new_ft, None, None, new_st)


def retrace(
    s: Schedule,
    w: Workflow,
    c: Cluster,
    changes: ActualWeights | None = None,
    lost_processors=(),
) -> RetraceResult:
    """Replay ``s`` with updated weights; report validity and new finish times."""
    lost = set(lost_processors)
    for e in s.entries:
        if e.proc in lost:
            return RetraceResult(False, {}, "processor_lost", e.task)
    wn = changes.apply(w) if changes is not None else w
    return _retrace_entries(s.entries, SchedulerState.initial(c, len(w)), wn, c)


# -- with recomputation --------------------------------------------------------------


class _DynamicRun:
    def __init__(self, w, c, policy, eviction, a, memory_aware, mm_mode, early):
        self.w = w
        self.c = c
        self.policy = policy
        self.eviction = EvictionPolicy(eviction)
        self.wa = a.apply(w)
        self.memory_aware = memory_aware
        self.mm_mode = mm_mode
        self.early = early
        n = len(w)
        self.state = SchedulerState.initial(c, n)
        self.known_mem = {}
        self.known_edges = {}
        self.started = [False] * n
        self.early_heap = []
        self.events = []
        self.recomputes = 0

    # knowledge available to the scheduler at time t
    def _known_ft(self, u, t):
        ft = self.state.ft[u]
        if ft <= t:
            return ft
        p = self.state.proc_of[u]
        return max(t, self.state.start[u] + self.w.tasks[u].work / self.c.processors[p].speed)

    def _known_workflow(self, t):
        work = {u: self.wa.tasks[u].work for u in range(len(self.w)) if self.started[u] and self.state.ft[u] <= t}
        return self.w.with_weights(work=work, mem=self.known_mem, edges=self.known_edges)

    def _known_state(self, t):
        ks = self.state.copy()
        for u in range(len(self.w)):
            if self.started[u]:
                ks.ft[u] = self._known_ft(u, t)
        for j, tasks in enumerate(ks.tasks_on):
            ks.rt[j] = ks.ft[tasks[-1]] if tasks else 0.0
        return ks

    def _reveal(self, v):
        self.known_mem[v] = self.wa.tasks[v].mem
        for u in self.w.parents[v]:
            self.known_edges[(u, v)] = self.wa.edge_size[(u, v)]
        for x in self.w.children[v]:
            self.known_edges[(v, x)] = self.wa.edge_size[(v, x)]

    def _reschedule(self, t, plan, i):
        wk = self._known_workflow(t)
        ks = self._known_state(t)
        remaining = {e.task for e in plan[i:]}
        if self.memory_aware:
            order = [u for u in rank_tasks(wk, self.policy, self.mm_mode).order if u in remaining]
            entries = assign_in_order(wk, self.c, order, ks, self.eviction)
        else:
            order = [u for u in bottom_level(wk).order if u in remaining]
            entries = heft_assign_in_order(wk, self.c, order, ks)
        self.recomputes += 1
        self.events.append(SimEvent(t, "reschedule", -1, -1))
        for e in entries:
            self.expected[e.task] = e.start
        return plan[:i] + entries

    def _fail(self, cause, v, p, t):
        events = [ev for ev in self.events if ev.t <= t]
        events.append(SimEvent(t, cause, v, p))
        return SimOutcome(False, t, Failure(cause, v, t), self.recomputes, _sorted_events(events))

    def run(self, plan: list[ScheduleEntry]) -> SimOutcome:
        state, wa, c = self.state, self.wa, self.c
        bw = c.bandwidth
        # Start times the scheduler currently expects; the plan's own start
        # times stay the floor below which tasks do not start.
        self.expected = {e.task: e.start for e in plan}
        i = 0
        guard = 50 * (len(plan) + 1)
        while i < len(plan):
            guard -= 1
            if guard < 0:
                raise RuntimeError("dynamic simulation does not converge")
            e = plan[i]
            v, p = e.task, e.proc
            now = max(e.start, _step3_start(v, p, state, wa, bw))

            # class 4: tasks that finished clearly early by now
            t_early = None
            while self.early_heap and self.early_heap[0][0] <= now:
                ft, x = heapq.heappop(self.early_heap)
                self.events.append(SimEvent(ft, "trigger_early", x, state.proc_of[x]))
                if t_early is None:
                    t_early = ft
            if t_early is not None:
                try:
                    plan = self._reschedule(t_early, plan, i)
                except SchedulingFailure:
                    self.events.append(SimEvent(t_early, "reschedule_failed", -1, -1))
                continue

            # class 3: actual memory does not fit the planned placement
            self._reveal(v)
            evictions = _evicted_keys(e)
            cause = _fits(v, p, evictions, state, wa)
            if cause:
                self.events.append(SimEvent(now, "trigger_memory", v, p))
                if not self.memory_aware:
                    return self._fail(cause, v, p, now)
                try:
                    plan = self._reschedule(now, plan, i)
                except SchedulingFailure as exc:
                    return self._fail("scheduling_failure", exc.task, -1, now)
                continue

            # classes 1 and 2: processor still busy, or an input still missing
            expected = self.expected[v]
            if now > expected:
                kind = "trigger_blocked" if state.rt[p] > expected else "trigger_predecessor"
                self.events.append(SimEvent(now, kind, v, p))
                traced = _retrace_entries(plan[i:], self._known_state(now), self._known_workflow(now), c)
                if not traced.valid:
                    try:
                        plan = self._reschedule(now, plan, i)
                        continue
                    except SchedulingFailure:
                        self.events.append(SimEvent(now, "reschedule_failed", -1, -1))
                else:
                    self.expected.update(traced.new_st)

            finish = now + wa.tasks[v].work / c.processors[p].speed
            commit_assign(Candidate(v, p, now, finish, evictions), state, wa, c)
            self.started[v] = True
            self.events.append(SimEvent(now, "start", v, p))
            self.events.append(SimEvent(finish, "finish", v, p))
            if wa.tasks[v].work < (1 - self.early) * self.w.tasks[v].work:
                heapq.heappush(self.early_heap, (finish, v))
            i += 1
        makespan = max((state.ft[e.task] for e in plan), default=0.0)
        return SimOutcome(True, makespan, None, self.recomputes, _sorted_events(self.events))


def simulate_with_recompute(
    w: Workflow,
    c: Cluster,
    policy: RankPolicy | str | None = RankPolicy.BL,
    eviction: EvictionPolicy | str = EvictionPolicy.LARGEST_FIRST,
    a: ActualWeights | None = None,
    *,
    schedule: Schedule | None = None,
    mm_mode: str = "auto",
    early_threshold: float = EARLY_FINISH,
) -> SimOutcome:
    """Run with feedback to the scheduler.

    ``policy=None`` selects the memory-oblivious HEFT baseline, which
    cannot repair memory overflows: these end the run. ``schedule`` may
    pass a precomputed initial plan built from the estimates.
    """
    memory_aware = policy is not None
    if a is None:
        a = ActualWeights()
    if schedule is None:
        try:
            if memory_aware:
                schedule = heftm_schedule(w, c, policy, eviction, ranks=rank_tasks(w, policy, mm_mode))
            else:
                schedule = heft_schedule(w, c)
        except SchedulingFailure as exc:
            return SimOutcome(False, 0.0, Failure("scheduling_failure", exc.task, 0.0), 0, [])
    run = _DynamicRun(w, c, RankPolicy(policy) if memory_aware else None, eviction, a, memory_aware, mm_mode, early_threshold)
    return run.run(list(schedule.entries))
