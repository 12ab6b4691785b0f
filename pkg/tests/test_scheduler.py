import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memheft.cluster import reference_cluster
from memheft.ranking import RankPolicy, bottom_level, rank_tasks
from memheft.scheduler import (
    Candidate,
    ConservationError,
    EvictionPolicy,
    Schedule,
    SchedulerState,
    SchedulingFailure,
    commit_assign,
    compute_res,
    heft_schedule,
    heftm_schedule,
    plan_evictions,
    tentative_assign,
)
from memheft.validator import validate
from memheft.workflow import generate_synthetic
from oracles import heft_oracle, heftm_oracle, make_cluster, make_workflow
from strategies import clusters, dags


def state_with_pending(sizes, mem=100, buf=100):
    c = make_cluster([(1, mem)], buffers=[buf])
    s = SchedulerState.initial(c, 10)
    for i, size in enumerate(sizes):
        s.pending[0][(i, 9)] = size
        s.avail_mem[0] -= size
    return s


# -- baseline ----------------------------------------------------------------------


def test_heft_single_task():
    s = heft_schedule(make_workflow([(10, 0)]), make_cluster([(2, 1)]))
    assert (s.entries[0].start, s.entries[0].finish, s.makespan) == (0.0, 5.0, 5.0)


def test_heft_two_independent_tasks_tie_to_lower_id():
    w = make_workflow([(10, 0), (10, 0)])
    c = make_cluster([(2, 1), (1, 1)], bandwidth=1e12)
    s = heft_schedule(w, c)
    assert [(e.task, e.proc, e.finish) for e in s.entries] == [(0, 0, 5.0), (1, 0, 10.0)]
    # exhaustive check: no assignment of the two tasks beats 10
    best = min(
        max(sum(10 / (2, 1)[p] for t, p in enumerate(a) if p == q) for q in (0, 1))
        for a in itertools.product((0, 1), repeat=2)
    )
    assert s.makespan == best == 10


def test_heft_chain_stays_local():
    w = make_workflow([(4, 0), (4, 0)], {(0, 1): 8})
    c = make_cluster([(1, 1), (1, 1)], bandwidth=1)
    s = heft_schedule(w, c)
    assert s.entries[0].proc == s.entries[1].proc
    assert s.makespan == 8
    # the remote alternative would finish at 4 + 8 + 4
    assert heft_oracle(w, c, [0, 1])[1][3] == 8


def test_heft_ignores_memory():
    w = make_workflow([(1, 500)])
    s = heft_schedule(w, make_cluster([(1, 10)]))
    assert len(s.entries) == 1


# -- memory slack and evictions -------------------------------------------------------


def test_compute_res_examples():
    # availM=20, m=10, remote inputs 4, outputs 5 -> 1
    w = make_workflow([(1, 0), (1, 10), (1, 0)], {(0, 1): 4, (1, 2): 5})
    c = make_cluster([(1, 20), (1, 100)])
    s = SchedulerState.initial(c, 3)
    s.proc_of[0] = 1
    assert compute_res(1, 0, s, w) == 1
    assert compute_res(0, 0, SchedulerState.initial(make_cluster([(1, 10)]), 1), make_workflow([(1, 10)])) == 0
    w2 = make_workflow([(1, 10), (1, 0)], {(0, 1): 12})
    assert compute_res(0, 0, SchedulerState.initial(make_cluster([(1, 10)]), 2), w2) == -12


def test_plan_evictions_examples():
    s = state_with_pending([3, 5, 8])
    assert plan_evictions(6, 0, s) == [(2, 9)]
    assert plan_evictions(12, 0, s) == [(2, 9), (1, 9)]
    assert plan_evictions(20, 0, s) is None
    assert plan_evictions(6, 0, s, EvictionPolicy.SMALLEST_FIRST) == [(0, 9), (1, 9)]


def test_plan_evictions_respects_buffer_and_protection():
    s = state_with_pending([3, 5, 8], buf=7)
    assert plan_evictions(6, 0, s) is None  # 8 does not fit in 7
    s = state_with_pending([3, 5, 8])
    assert plan_evictions(6, 0, s, protected={(2, 9)}) == [(1, 9), (0, 9)]
    assert plan_evictions(9, 0, s, protected={(2, 9)}) is None


def test_plan_evictions_equal_sizes_break_ties_by_file_id():
    s = state_with_pending([4, 4, 4])
    assert plan_evictions(5, 0, s) == [(0, 9), (1, 9)]


# -- tentative placement ----------------------------------------------------------------


def test_tentative_infeasible_when_local_input_was_evicted():
    w = make_workflow([(1, 0), (1, 0)], {(0, 1): 4})
    c = make_cluster([(1, 10), (1, 10)])
    s = SchedulerState.initial(c, 2)
    commit_assign(tentative_assign(0, 0, s, w, c), s, w, c)
    key = (0, 1)
    s.buffer_pending[0][key] = s.pending[0].pop(key)
    s.avail_mem[0] += 4
    s.avail_buf[0] -= 4
    cand = tentative_assign(1, 0, s, w, c)
    assert not cand.feasible and math.isinf(cand.finish)
    assert tentative_assign(1, 1, s, w, c).feasible


def test_tentative_source_on_empty_processor():
    w = make_workflow([(6, 1)])
    c = make_cluster([(3, 10)])
    cand = tentative_assign(0, 0, SchedulerState.initial(c, 1), w, c)
    assert (cand.start, cand.finish, cand.feasible) == (0.0, 2.0, True)


def test_tentative_start_uses_link_ready_time():
    w = make_workflow([(1, 0), (1, 0)], {(0, 1): 6})
    c = make_cluster([(1, 100), (1, 100)], bandwidth=2)
    s = SchedulerState.initial(c, 2)
    s.proc_of[0], s.ft[0] = 1, 10.0
    s.pending[1][(0, 1)] = 6
    s.avail_mem[1] -= 6
    s.link_rt[1][0] = 12.0
    cand = tentative_assign(1, 0, s, w, c)
    assert cand.start == 15.0 and cand.finish == 16.0


def test_tentative_does_not_mutate_state():
    w = generate_synthetic(30, 5, 3, seed=2)
    c = reference_cluster("mem_constrained", 1)
    s = SchedulerState.initial(c, len(w))
    order = bottom_level(w).order
    for v in order[:10]:
        best = min((tentative_assign(v, p, s, w, c) for p in range(len(c))), key=lambda x: x.finish)
        commit_assign(best, s, w, c)
    before = s.copy()
    v = order[10]
    for p in range(len(c)):
        tentative_assign(v, p, s, w, c)
    assert (s.avail_mem, s.avail_buf, s.pending, s.buffer_pending, s.rt, s.link_rt) == (
        before.avail_mem, before.avail_buf, before.pending, before.buffer_pending, before.rt, before.link_rt)


# -- commits ---------------------------------------------------------------------------


def test_commit_bookkeeping():
    w = make_workflow([(1, 0), (1, 0), (1, 0)], {(0, 1): 4, (1, 2): 2})
    c = make_cluster([(1, 10), (1, 10)], bandwidth=2)
    s = SchedulerState.initial(c, 3)
    commit_assign(tentative_assign(0, 0, s, w, c), s, w, c, check=True)
    assert s.avail_mem[0] == 6 and s.pending[0] == {(0, 1): 4}
    # same-processor child: +4 for the consumed input, -2 for its output
    s_local = s.copy()
    commit_assign(tentative_assign(1, 0, s_local, w, c), s_local, w, c, check=True)
    assert s_local.avail_mem[0] == 8 and s_local.pending[0] == {(1, 2): 2}
    # remote child: producer frees the file and the link gets busy
    commit_assign(tentative_assign(1, 1, s, w, c), s, w, c, check=True)
    assert s.avail_mem[0] == 10 and s.pending[0] == {}
    assert s.link_rt[0][1] == 2.0
    assert s.pending[1] == {(1, 2): 2} and s.rt[1] == s.ft[1] == 4.0


def test_commit_rejects_infeasible():
    w = make_workflow([(1, 0)])
    c = make_cluster([(1, 10)])
    with pytest.raises(ValueError):
        commit_assign(Candidate(0, 0, math.inf, math.inf, (), False), SchedulerState.initial(c, 1), w, c)


def test_conservation_check_catches_drift():
    c = make_cluster([(1, 10)])
    s = SchedulerState.initial(c, 1)
    s.avail_mem[0] = 9
    with pytest.raises(ConservationError):
        s.check_conservation()


# -- full schedules ------------------------------------------------------------------------


def test_heftm_failure_names_oversized_task():
    w = make_workflow([(1, 5), (1, 50), (1, 5)], {(0, 1): 1, (1, 2): 1})
    c = make_cluster([(1, 20), (2, 30)])
    with pytest.raises(SchedulingFailure) as exc:
        heftm_schedule(w, c)
    assert exc.value.task == 1
    assert set(exc.value.reasons) == {0, 1}


def test_heftm_picks_faster_processor():
    s = heftm_schedule(make_workflow([(4, 1)]), make_cluster([(1, 10), (2, 10)]))
    assert s.entries[0].proc == 1 and s.makespan == 2.0


def test_heftm_diamond_on_reference_cluster_matches_exhaustive_greedy():
    w = make_workflow([(10**9, 10**6)] * 4, {(0, 1): 10**6, (0, 2): 10**6, (1, 3): 10**6, (2, 3): 10**6})
    c = reference_cluster("default", 1)
    s = heftm_schedule(w, c)
    # each greedy step over all 6 processors, enumerated by the oracle
    ref = heftm_oracle(w, c, bottom_level(w).order)
    assert [(e.task, e.proc, e.start, e.finish) for e in s.entries] == [r[:4] for r in ref]
    assert s.makespan == max(r[3] for r in ref)


def test_heftm_equals_heft_when_memory_is_abundant():
    w = make_workflow([(3, 1), (2, 1), (4, 1), (1, 1)], {(0, 1): 2, (0, 2): 5, (1, 3): 1, (2, 3): 3})
    c = make_cluster([(1, 10**6), (2, 10**6), (3, 10**6)], bandwidth=1.5)
    a, b = heft_schedule(w, c), heftm_schedule(w, c, "BL")
    assert a.placement() == b.placement()


@settings(max_examples=200, deadline=None)
@given(dags(max_tasks=6, max_mem=60, max_edge=40), clusters(), st.sampled_from(list(RankPolicy)),
       st.sampled_from(list(EvictionPolicy)))
def test_heftm_matches_greedy_oracle(w, c, policy, eviction):
    order = rank_tasks(w, policy).order
    ref = heftm_oracle(w, c, order, eviction is EvictionPolicy.LARGEST_FIRST)
    try:
        s = heftm_schedule(w, c, policy, eviction, check=True)
    except SchedulingFailure as exc:
        assert ref == ("fail", exc.task)
        return
    assert ref != "fail" and ref[0] != "fail"
    got = [(e.task, e.proc, e.start, e.finish, tuple((x, y) for x, y, _ in e.evicted)) for e in s.entries]
    assert got == ref
    assert validate(s, w, c).valid


@settings(max_examples=200, deadline=None)
@given(dags(max_tasks=6), clusters())
def test_heft_matches_greedy_oracle(w, c):
    s = heft_schedule(w, c)
    assert [(e.task, e.proc, e.start, e.finish) for e in s.entries] == heft_oracle(w, c, bottom_level(w).order)


@settings(max_examples=100, deadline=None)
@given(dags(max_tasks=8, max_mem=60, max_edge=40, min_work=1), clusters())
def test_schedule_invariants(w, c):
    try:
        s = heftm_schedule(w, c, "BL", check=True)
    except SchedulingFailure:
        return
    assert [e.task for e in s.entries] == list(bottom_level(w).order)
    proc = s.placement()
    ent = {e.task: e for e in s.entries}
    for (u, v), size in w.edge_size.items():
        assert ent[v].start >= ent[u].finish
        if proc[u] != proc[v]:
            assert ent[v].start >= ent[u].finish + size / c.bandwidth
    assert s.makespan == max(e.finish for e in s.entries)
    # critical path of work alone, run at the top speed, bounds the makespan
    longest = {}
    for u in reversed(w.topo_order):
        longest[u] = w.tasks[u].work + max((longest[x] for x in w.children[u]), default=0)
    assert s.makespan >= max(longest.values()) / max(c.speeds) * (1 - 1e-12)
    assert heftm_schedule(w, c, "BL") == s


def test_conservation_holds_at_every_commit_on_generated_workflows():
    for seed in range(5):
        w = generate_synthetic(120, 10, 4, seed=seed)
        for kind in ("default", "mem_constrained"):
            c = reference_cluster(kind, 1)
            for policy in RankPolicy:
                try:
                    heftm_schedule(w, c, policy, check=True)
                except SchedulingFailure:
                    pass


def test_schedule_json_round_trip(tmp_path):
    w = generate_synthetic(40, 6, 3, seed=1)
    c = reference_cluster("mem_constrained", 1)
    s = heftm_schedule(w, c, "MM")
    s.dump(tmp_path / "s.json")
    back = Schedule.load(tmp_path / "s.json")
    assert back == s
    assert list(s.to_dict()) == ["entries", "makespan"]
    assert list(s.to_dict()["entries"][0]) == ["task", "proc", "start", "finish", "evicted"]
