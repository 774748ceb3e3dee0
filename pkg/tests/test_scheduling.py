import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corescope.errors import GenerationFailed, Unschedulable
from corescope.gridgen import E, W, InfraParams, TrainSpec, generate_infrastructure, to_graph
from corescope.routing import k_shortest_paths
from corescope.scheduling import Schedule, TrainRun, find_conflicts, generate_schedule, run_violations, \
    verify_conflict_free
from instances import infra_from_cells, passing_loop, with_trains


def loop_with_two_trains():
    return with_trains(passing_loop(), [
        TrainSpec(0, (1, 0), E, (1, 4), Fraction(1), 0, 1),
        TrainSpec(1, (1, 4), W, (1, 0), Fraction(1), 1, 0),
    ])


def test_single_train_departs_at_zero():
    cells = {(0, c): ("straight", 1) for c in range(5)}
    infra = with_trains(infra_from_cells(5, 1, cells), [TrainSpec(0, (0, 0), E, (0, 4), Fraction(1, 3), 0, 1)])
    run = generate_schedule(infra).runs[0]
    assert run.departure == 0
    assert run.times == (0, 3, 6, 9, 12)


def test_opposing_trains_one_waits_at_origin():
    infra = loop_with_two_trains()
    schedule = generate_schedule(infra, k=1, slack=3.0)
    assert verify_conflict_free(schedule) == []
    deps = sorted(r.departure for r in schedule.runs.values())
    assert deps[0] == 0 and deps[1] > 0

    # brute force over departure offsets on the same single-path candidates
    g = to_graph(infra)
    paths = {t.train_id: k_shortest_paths(g, t.start, g.nodes_at(t.target), 1)[0] for t in infra.trains}
    best = None
    for d0, d1 in itertools.product(range(schedule.horizon + 1), repeat=2):
        runs = [TrainRun.along(0, paths[0], d0, 1), TrainRun.along(1, paths[1], d1, 1)]
        if max(r.arrival for r in runs) > schedule.horizon or find_conflicts(runs):
            continue
        total = sum(r.arrival for r in runs)
        best = total if best is None else min(best, total)
    assert schedule.total_run_time == best


def test_passing_loop_used_when_both_tracks_allowed():
    schedule = generate_schedule(loop_with_two_trains(), k=2)
    assert verify_conflict_free(schedule) == []
    assert [r.departure for r in schedule.runs.values()] == [0, 0]
    assert {schedule.runs[0].path[3][:2], schedule.runs[1].path[3][:2]} == {(0, 2), (2, 2)}


def test_identical_runs_conflict_on_every_cell():
    path = ((0, 0, E), (0, 1, E), (0, 2, E))
    a, b = TrainRun.along(0, path, 0, 1), TrainRun.along(1, path, 0, 1)
    conflicts = find_conflicts([a, b])
    assert sorted(c.resource for c in conflicts) == [(0, 0), (0, 1), (0, 2)]


def test_disjoint_runs_have_no_conflicts():
    a = TrainRun.along(0, ((0, 0, E), (0, 1, E)), 0, 1)
    b = TrainRun.along(1, ((5, 0, E), (5, 1, E)), 0, 1)
    assert find_conflicts([a, b]) == []


def test_hand_built_crossing_has_one_conflict():
    # horizontal train holds (1,1) over [1,2]; vertical train enters it at 2
    a = TrainRun.along(0, ((1, 0, E), (1, 1, E), (1, 2, E)), 0, 1)
    b = TrainRun.along(1, ((0, 1, 2), (1, 1, 2), (2, 1, 2)), 1, 1)
    (c,) = find_conflicts([a, b])
    assert c.resource == (1, 1)
    assert (c.train_a, c.train_b) == (0, 1)
    assert c.overlap == (2, 2)


def test_leaving_step_counts_as_held():
    a = TrainRun.along(0, ((0, 0, E), (0, 1, E)), 0, 1)
    assert a.holds() == [((0, 0), 0, 1), ((0, 1), 1, 2)]
    b_touching = TrainRun.along(1, ((0, 1, W), (0, 0, W)), 2, 1)
    assert find_conflicts([a, b_touching])
    assert not find_conflicts([a, TrainRun.along(1, ((0, 1, W), (0, 0, W)), 3, 1)])


def test_run_violations_catch_illegal_moves():
    g = to_graph(passing_loop())
    bad = TrainRun(0, (((1, 0, E), 0), ((2, 2, E), 1)), 1)
    assert run_violations(bad, g)
    ok = TrainRun.along(0, k_shortest_paths(g, (1, 0, E), g.nodes_at((1, 4)), 1)[0], 0, 1)
    assert run_violations(ok, g) == []


def test_too_short_horizon_is_unschedulable():
    with pytest.raises(Unschedulable):
        generate_schedule(loop_with_two_trains(), horizon=7, k=1, max_restarts=3)


def test_paper_scale_schedule_is_conflict_free():
    params = InfraParams(width=100, height=100, max_num_cities=8, max_rail_in_city=2, number_of_agents=62)
    infra = generate_infrastructure(params, 190)
    schedule = generate_schedule(infra, seed=0, slack=4.0)
    assert len(schedule.runs) == 62
    assert verify_conflict_free(schedule, infra) == []


def test_same_seed_same_schedule():
    infra = generate_infrastructure(InfraParams(number_of_agents=10), 4)
    assert generate_schedule(infra, seed=3, slack=3.0).dumps() == generate_schedule(infra, seed=3, slack=3.0).dumps()


def test_schedule_roundtrip():
    infra = generate_infrastructure(InfraParams(number_of_agents=6), 4)
    s = generate_schedule(infra, seed=1, slack=3.0)
    import json
    assert Schedule.from_dict(json.loads(s.dumps())).dumps() == s.dumps()


@given(seed=st.integers(0, 300), agents=st.integers(1, 10), k=st.sampled_from([1, 1, 3]))
def test_generated_schedule_invariants(seed, agents, k):
    try:
        infra = generate_infrastructure(InfraParams(max_num_cities=3, number_of_agents=agents), seed)
        schedule = generate_schedule(infra, seed=seed, slack=4.0, k=k)
    except (GenerationFailed, Unschedulable):
        return
    g = to_graph(infra)
    assert verify_conflict_free(schedule) == []
    for t in infra.trains:
        run = schedule.runs[t.train_id]
        assert run.departure >= 0 and run.arrival <= schedule.horizon
        assert run_violations(run, g) == []
        assert all(b > a for a, b in zip(run.times, run.times[1:]))
        # no time reserves: every step takes exactly the minimum
        assert run.arrival - run.departure == (len(run.path) - 1) * t.steps_per_cell
        assert run.path[0] == t.start and run.path[-1][:2] == t.target
