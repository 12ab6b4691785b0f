import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memheft.cluster import reference_cluster
from memheft.ranking import RankPolicy
from memheft.scheduler import SchedulingFailure, heft_schedule, heftm_schedule
from memheft.simulator import (
    ActualWeights,
    DeviationModel,
    retrace,
    sample_actuals,
    simulate_no_recompute,
    simulate_with_recompute,
)
from memheft.validator import validate
from memheft.workflow import generate_synthetic
from oracles import make_cluster, make_workflow
from strategies import clusters, dags

G = 10**9


def constrained_instance(seed, n=40):
    w = generate_synthetic(n, max(2, round(n**0.7)), 2, {"mem": (G // 10, 2 * G), "edge": (G // 5, 3 * G)}, seed)
    return w, reference_cluster("mem_constrained", 2)


# -- sampling -----------------------------------------------------------------------------


def test_zero_std_returns_estimates():
    w = generate_synthetic(30, 4, 3, seed=1)
    a = sample_actuals(w, DeviationModel(0.0, {"work", "mem", "edge"}, seed=5))
    assert a == ActualWeights.estimates(w)
    assert a.apply(w) == w


def test_sample_moments():
    w = make_workflow([(100, 100)] * 10**4)
    a = sample_actuals(w, DeviationModel(0.10, {"work"}, seed=123))
    values = np.array(list(a.work.values()), dtype=float)
    assert 99 <= values.mean() <= 101
    assert 9 <= values.std() <= 11
    assert set(a.mem.values()) == {100}


def test_sampling_is_deterministic_and_clamped():
    w = generate_synthetic(50, 5, 3, seed=2)
    d = DeviationModel(0.10, {"work", "mem", "edge"}, seed=9)
    assert sample_actuals(w, d) == sample_actuals(w, d)
    assert sample_actuals(w, d) != sample_actuals(w, DeviationModel(0.10, {"work", "mem", "edge"}, seed=10))
    wild = sample_actuals(w, DeviationModel(5.0, {"work", "mem", "edge"}, seed=3))
    for t in w.tasks:
        assert wild.work[t.id] >= 0.01 * t.work and wild.work[t.id] > 0
        assert wild.mem[t.id] >= 0.01 * t.mem and wild.mem[t.id] > 0
    assert all(v > 0 for v in wild.edges.values())


def test_edge_draws_do_not_disturb_task_draws():
    w = generate_synthetic(30, 5, 3, seed=4)
    fewer = make_workflow([(t.work, t.mem) for t in w.tasks], {(e.src, e.dst): e.size for e in w.edges[:-3]})
    d = DeviationModel(0.2, {"work", "mem", "edge"}, seed=1)
    assert sample_actuals(w, d).work == sample_actuals(fewer, d).work
    assert sample_actuals(w, d).mem == sample_actuals(fewer, d).mem


def test_deviation_model_validation():
    with pytest.raises(ValueError):
        DeviationModel(-0.1)
    with pytest.raises(ValueError):
        DeviationModel(0.1, clamp_floor=0)
    with pytest.raises(ValueError):
        DeviationModel(0.1, {"speed"})


# -- without recomputation ------------------------------------------------------------------


def test_no_recompute_zero_deviation_is_exact():
    w, c = constrained_instance(3)
    s = heftm_schedule(w, c, "BLC")
    out = simulate_no_recompute(s, w, c, ActualWeights())
    assert out.valid and out.makespan == s.makespan and out.recompute_count == 0
    assert out.makespan == out.events[-1].t


def test_no_recompute_single_task_oom():
    w = make_workflow([(4, 8)])
    c = make_cluster([(1, 10)])
    s = heftm_schedule(w, c)
    out = simulate_no_recompute(s, w, c, ActualWeights(mem={0: 12}))
    assert not out.valid
    assert (out.failure.cause, out.failure.task, out.failure.time) == ("out_of_memory", 0, 0.0)


def test_slow_predecessor_shifts_successor():
    w = make_workflow([(10, 1), (5, 1)], {(0, 1): 1})
    c = make_cluster([(1, 100)])
    s = heftm_schedule(w, c)
    out = simulate_no_recompute(s, w, c, ActualWeights(work={0: 12}))
    starts = {e.task: e.t for e in out.events if e.kind == "start"}
    assert starts[1] == s.entries[1].start + 2
    assert out.makespan == s.makespan + 2


def test_no_recompute_keeps_planned_starts_after_early_finish():
    w = make_workflow([(10, 1), (5, 1)], {(0, 1): 1})
    c = make_cluster([(1, 100)])
    s = heftm_schedule(w, c)
    out = simulate_no_recompute(s, w, c, ActualWeights(work={0: 6}))
    assert out.makespan == s.makespan


def test_oom_is_confirmed_by_validator_replay():
    hits = 0
    for seed in range(40):
        w, c = constrained_instance(seed, 30)
        try:
            s = heftm_schedule(w, c, "BL")
        except SchedulingFailure:
            continue
        a = sample_actuals(w, DeviationModel(0.10, seed=seed))
        out = simulate_no_recompute(s, w, c, a)
        if out.valid or out.failure.cause != "out_of_memory":
            continue
        hits += 1
        report = validate(s, a.apply(w), c)
        memory = [v for v in report.violations if v.kind in ("memory_exceeded", "buffer_exceeded")]
        assert memory and memory[0].task == out.failure.task
    assert hits > 0


# -- retrace -------------------------------------------------------------------------------


def test_retrace_fixed_point():
    w, c = constrained_instance(5)
    s = heftm_schedule(w, c, "MM")
    r = retrace(s, w, c)
    assert r.valid and r.new_ft == {e.task: e.finish for e in s.entries}
    assert retrace(s, w, c, ActualWeights()).new_ft == r.new_ft


def test_retrace_lost_processor():
    w, c = constrained_instance(5)
    s = heftm_schedule(w, c, "BL")
    used = s.entries[0].proc
    r = retrace(s, w, c, lost_processors={used})
    assert not r.valid and r.reason == "processor_lost"
    idle = [p for p in range(len(c)) if p not in set(s.placement().values())]
    if idle:
        assert retrace(s, w, c, lost_processors={idle[0]}).valid


def test_retrace_memory_flip_names_task():
    w = make_workflow([(1, 3), (1, 4)], {(0, 1): 2})
    c = make_cluster([(1, 10)])
    s = heftm_schedule(w, c)
    assert retrace(s, w, c).valid
    r = retrace(s, w, c, ActualWeights(mem={1: 9}))
    assert not r.valid and r.task == 1


def test_retrace_updates_finish_times():
    w = make_workflow([(10, 1), (5, 1)], {(0, 1): 1})
    c = make_cluster([(1, 100)])
    s = heftm_schedule(w, c)
    r = retrace(s, w, c, ActualWeights(work={0: 12}))
    assert r.valid and r.new_ft == {0: 12.0, 1: 17.0}


@settings(max_examples=80, deadline=None)
@given(dags(max_tasks=7, max_mem=60, max_edge=40), clusters(), st.sampled_from(list(RankPolicy)))
def test_zero_deviation_fixed_points(w, c, policy):
    try:
        s = heftm_schedule(w, c, policy)
    except SchedulingFailure:
        return
    assert retrace(s, w, c).new_ft == {e.task: e.finish for e in s.entries}
    a = sample_actuals(w, DeviationModel(0.0))
    nr = simulate_no_recompute(s, w, c, a)
    wr = simulate_with_recompute(w, c, policy, a=a)
    assert nr.valid and wr.valid
    assert nr.makespan == wr.makespan == s.makespan
    assert wr.recompute_count == 0


# -- with recomputation -----------------------------------------------------------------------


def test_with_recompute_zero_deviation():
    w, c = constrained_instance(8)
    s = heftm_schedule(w, c, "BL")
    out = simulate_with_recompute(w, c, "BL", a=ActualWeights())
    assert out.valid and out.recompute_count == 0 and out.makespan == s.makespan


def test_early_finish_triggers_recompute():
    # a -> c on one processor, b elsewhere; a finishes 20% early
    w = make_workflow([(10, 1), (10, 1), (10, 1)], {(0, 2): 1})
    c = make_cluster([(1, 100), (1, 100)], bandwidth=1e6)
    s = heftm_schedule(w, c)
    a = ActualWeights(work={0: 8})
    nr = simulate_no_recompute(s, w, c, a)
    wr = simulate_with_recompute(w, c, "BL", a=a)
    assert wr.recompute_count >= 1
    assert any(e.kind == "trigger_early" for e in wr.events)
    assert wr.valid and nr.valid
    assert wr.makespan <= nr.makespan
    assert wr.makespan == 18.0 and nr.makespan == 20.0


def oom_flip_instance():
    # fast processor with little memory, slow processor with plenty
    w = make_workflow([(8, 8)])
    c = make_cluster([(2, 10), (1, 100)])
    return w, c, ActualWeights(mem={0: 20})


def test_oom_flip():
    w, c, a = oom_flip_instance()
    s = heftm_schedule(w, c)
    assert s.entries[0].proc == 0
    nr = simulate_no_recompute(s, w, c, a)
    wr = simulate_with_recompute(w, c, "BL", a=a)
    assert not nr.valid and nr.failure.cause == "out_of_memory"
    assert wr.valid and wr.recompute_count == 1 and wr.makespan == 8.0
    starts = [e for e in wr.events if e.kind == "start"]
    assert starts[0].proc == 1


def test_heft_baseline_cannot_repair_memory():
    w, c, a = oom_flip_instance()
    out = simulate_with_recompute(w, c, None, a=a)
    assert not out.valid and out.failure.cause == "out_of_memory"


def test_unschedulable_estimate_is_a_failure():
    w = make_workflow([(1, 500)])
    out = simulate_with_recompute(w, make_cluster([(1, 10)]), "BL")
    assert not out.valid and out.failure.cause == "scheduling_failure"


def test_with_recompute_is_reproducible_and_logs_jsonl():
    w, c = constrained_instance(11, 50)
    a = sample_actuals(w, DeviationModel(0.1, seed=2))
    one = simulate_with_recompute(w, c, "MM", a=a)
    two = simulate_with_recompute(w, c, "MM", a=a)
    assert one == two
    lines = one.events_jsonl().splitlines()
    assert len(lines) == len(one.events)
    assert list(json.loads(lines[0])) == ["t", "kind", "task", "proc"]
    times = [e.t for e in one.events]
    assert times == sorted(times)


def test_validity_dominance_small_suite():
    for i in range(4):
        w, c = constrained_instance(100 + i, 40)
        try:
            s = heftm_schedule(w, c, "BL")
        except SchedulingFailure:
            continue
        for seed in range(6):
            a = sample_actuals(w, DeviationModel(0.1, seed=seed))
            nr = simulate_no_recompute(s, w, c, a)
            wr = simulate_with_recompute(w, c, "BL", a=a, schedule=s)
            assert wr.valid or not nr.valid
            if wr.valid:
                assert wr.failure is None and wr.makespan == max(e.t for e in wr.events)


def test_heft_dynamic_zero_deviation():
    w, c = constrained_instance(1, 25)
    c = reference_cluster("default", 1)
    out = simulate_with_recompute(w, c, None, a=ActualWeights())
    assert out.makespan == heft_schedule(w, c).makespan
