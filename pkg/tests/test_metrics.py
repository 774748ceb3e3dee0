import pytest
from hypothesis import given
from hypothesis import strategies as st

from corescope.gridgen import E, to_graph
from corescope.metrics import TIME_RESOLUTION, additional_lateness, core_problem, prediction_quality, speedup, \
    total_delay
from corescope.resched import Solution
from corescope.routing import k_shortest_paths
from corescope.scheduling import Schedule, TrainRun
from instances import passing_loop


def test_speedup_examples():
    assert speedup(100, 50) == 2.0
    assert speedup(3.7, 3.7) == 1.0
    assert speedup(200, 20) == 10.0


def test_speedup_clamps_zero_times():
    assert speedup(0.0, 0.0) == 1.0
    assert speedup(1.0, 0.0) == pytest.approx(1 / TIME_RESOLUTION)


@given(a=st.floats(1e-3, 1e4), b=st.floats(1e-3, 1e4), c=st.floats(1e-3, 1e4))
def test_speedup_is_multiplicative(a, b, c):
    assert speedup(a, c) == pytest.approx(speedup(a, b) * speedup(b, c))


def test_f1_fixture():
    q = prediction_quality({"a", "b", "c", "d"}, {"a", "b"}, "abcdef")
    assert (q.tp, q.fp, q.fn, q.tn) == (2, 2, 0, 2)
    assert q.f1 == pytest.approx(2 / 3)
    assert q.precision == 0.5 and q.recall == 1.0


def test_f1_extremes():
    assert prediction_quality({1, 2}, {1, 2}, range(5)).f1 == 1.0
    assert prediction_quality({1}, {2}, range(5)).f1 == 0.0
    q = prediction_quality(set(), set(), range(5))
    assert q.vacuous and q.f1 == 1.0


@given(universe=st.integers(1, 12), data=st.data())
def test_f1_bounds_and_monotonicity(universe, data):
    items = list(range(universe))
    changed = data.draw(st.sets(st.sampled_from(items)))
    predicted = data.draw(st.sets(st.sampled_from(items)))
    q = prediction_quality(predicted, changed, items)
    assert 0.0 <= q.f1 <= 1.0
    assert q.tp + q.fp + q.fn + q.tn == universe
    assert (q.f1 == 1.0) == (q.fp == q.fn == 0)
    # adding a missed train to the prediction never lowers F1
    missed = changed - predicted
    if missed:
        better = prediction_quality(predicted | {min(missed)}, changed, items)
        assert better.f1 >= q.f1


def test_additional_lateness_flags_unproven():
    assert additional_lateness(40, 30).value == 10
    assert not additional_lateness(40, 30).unproven
    assert additional_lateness(40, 30, scoped_proven=False).unproven
    assert additional_lateness(30, 30, optimal_proven=False).unproven


def three_train_fixture():
    g = to_graph(passing_loop())
    upper, lower = k_shortest_paths(g, (1, 0, E), g.nodes_at((1, 4)), 2)
    sched = {
        0: TrainRun.along(0, upper, 0, 1),
        1: TrainRun.along(1, ((5, 0, E), (5, 1, E), (5, 2, E)), 0, 1),
        2: TrainRun.along(2, ((7, 0, E), (7, 1, E)), 3, 1),
    }
    schedule = Schedule("0", sched, 30)
    resched = {
        0: TrainRun.along(0, lower, 0, 1),                               # rerouted, on time
        1: TrainRun.along(1, ((5, 0, E), (5, 1, E), (5, 2, E)), 0, 1),   # unchanged
        2: TrainRun.along(2, ((7, 0, E), (7, 1, E)), 5, 1),              # two steps late
    }
    return schedule, Solution(resched)


def test_core_problem_of_schedule_is_empty():
    schedule, _ = three_train_fixture()
    core = core_problem(schedule, Solution(dict(schedule.runs)))
    assert core.trains == frozenset() and core.nodes == frozenset()


def test_core_problem_of_rerouted_fixture():
    schedule, solution = three_train_fixture()
    core = core_problem(schedule, solution)
    assert core.trains == {0, 2}
    upper = set(schedule.runs[0].path)
    lower = set(solution.runs[0].path)
    expected = {(0, w) for w in upper ^ lower} | {(2, w) for w in schedule.runs[2].path}
    assert core.nodes == expected
    assert total_delay(schedule, solution) == 2
