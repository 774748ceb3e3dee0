import pytest
from hypothesis import given
from hypothesis import strategies as st

from corescope.errors import Infeasible, TooLarge
from corescope.resched import CostWeights, Malfunction, ScopedProblem, TrainProblem, apply_scope, \
    build_full_problem, cost, draw_malfunction
from corescope.scheduling import Schedule, TrainRun, find_conflicts
from corescope.scopers import ScopeDirective, frozen_to
from corescope.solver import Budget, brute_force_oracle, count_plans, solve
from instances import desk_instance, lattice_problem, tiny_problem


def chain(tid, path, departure, window, steps=1, halt=None):
    """Single-route train problem along ``path`` with uniform window width."""
    succ = {u: (v,) for u, v in zip(path, path[1:])}
    succ[path[-1]] = ()
    run = TrainRun.along(tid, tuple(path), departure, steps)
    halt = halt or {}
    earliest, t = {}, departure
    for u in path:
        earliest[u] = t
        t += steps + halt.get(u, 0)
    latest = {u: e + window for u, e in earliest.items()}
    return TrainProblem(tid, steps, path[0], frozenset({path[-1]}), succ, earliest, latest, halt, run)


def problem_of(*trains, weights=CostWeights(30, 1)):
    return ScopedProblem({tp.train_id: tp for tp in trains}, Malfunction(trains[0].train_id, 0, 1), weights, 5)


def east(row, c0, c1):
    return [(row, c, 1) for c in range(c0, c1 + 1)]


def west(row, c0, c1):
    return [(row, c, 3) for c in range(c0, c1 - 1, -1)]


def assert_valid(problem, solution):
    assert solution.feasible
    assert not find_conflicts(solution.runs.values())
    for t, tp in problem.trains.items():
        assert tp.contains(solution.runs[t])
    sched = Schedule("0", {t: tp.scheduled for t, tp in problem.trains.items()}, 0)
    assert cost(solution, sched, problem.weights) == solution.objective


def test_single_train_takes_its_earliest_plan():
    p = problem_of(chain(0, east(0, 0, 4), 0, 3, halt={(0, 1, 1): 2}))
    sol, stats = solve(p)
    assert sol.objective == 2
    assert sol.runs[0].times == (0, 1, 4, 5, 6)
    assert stats.optimal and stats.nodes_expanded == 0


def test_follower_waits_behind_halted_leader():
    leader = chain(0, east(0, 0, 4), 0, 0, halt={(0, 2, 1): 3})
    follower = chain(1, east(0, 0, 4), 2, 6)
    p = problem_of(leader, follower)
    sol, _ = solve(p)
    assert_valid(p, sol)
    assert sol.objective == brute_force_oracle(p).objective == 3 + 3


def test_all_frozen_returns_frozen_assignment_without_search():
    a = chain(0, east(0, 0, 3), 0, 0)
    b = chain(1, east(1, 0, 3), 0, 0)
    sol, stats = solve(problem_of(a, b))
    assert stats.nodes_expanded == 0
    assert sol.runs[0] == a.scheduled and sol.runs[1] == b.scheduled


def test_head_on_with_no_slack_is_infeasible():
    a = chain(0, east(0, 0, 4), 0, 0)
    b = chain(1, west(0, 4, 0), 0, 0)
    with pytest.raises(Infeasible):
        solve(problem_of(a, b))
    with pytest.raises(Infeasible):
        brute_force_oracle(problem_of(a, b))


def test_head_on_with_small_windows_is_infeasible_after_search():
    a = chain(0, east(0, 0, 4), 0, 2)
    b = chain(1, west(0, 4, 0), 0, 2)
    with pytest.raises(Infeasible):
        solve(problem_of(a, b))


def test_head_on_resolved_when_one_train_can_wait():
    a = chain(0, east(0, 0, 3), 0, 10)
    b = chain(1, west(0, 3, 0), 0, 10)
    p = problem_of(a, b)
    sol, _ = solve(p)
    assert_valid(p, sol)
    # one of them waits until the other has released the shared line: 3 moves + 1 release step + 1
    assert sol.objective == 5 == brute_force_oracle(p).objective


def test_oracle_refuses_huge_problems():
    p = problem_of(*(chain(t, east(t, 0, 8), 0, 5) for t in range(3)))
    with pytest.raises(TooLarge):
        brute_force_oracle(p, cap=1000)


def test_plan_count_matches_enumeration():
    tp = chain(0, east(0, 0, 3), 0, 2, halt={(0, 1, 1): 1})
    # entry times are nondecreasing subject to minimum gaps, each within [e, e+2]
    import itertools
    e = [tp.earliest[v] for v in tp.succ]
    brute = sum(1 for ts in itertools.product(*(range(x, x + 3) for x in e))
                if all(ts[i + 1] - ts[i] >= (2 if i == 1 else 1) for i in range(3)))
    assert count_plans(problem_of(tp)) == {0: brute}


def test_budget_exhaustion_reports_status():
    # seed 6 needs 24 expansions to prove the optimum
    p = lattice_problem(6, n_trains=3, span=3, max_window=4)
    full, full_stats = solve(p)
    assert full_stats.nodes_expanded > 1
    sol, stats = solve(p, budget=Budget(time_limit=None, node_limit=1))
    assert stats.status == "budget"
    assert not stats.optimal
    if sol.feasible:
        assert sol.objective >= full.objective
    _, roomy = solve(p, budget=Budget(time_limit=None, node_limit=10 * full_stats.nodes_expanded))
    assert roomy.status == "optimal"


def test_incumbent_trace_is_nonincreasing():
    for seed in range(30):
        try:
            _, stats = solve(lattice_problem(seed, n_trains=3, span=3, max_window=4))
        except Infeasible:
            continue
        objs = [o for _, _, o in stats.incumbent_trace]
        assert objs == sorted(objs, reverse=True)


@pytest.mark.parametrize("seed", range(40))
def test_matches_oracle_on_generated_instances(seed):
    p = tiny_problem(seed)
    if p is None:
        pytest.skip("no instance for this seed")
    try:
        expected = brute_force_oracle(p, cap=10**6)
    except TooLarge:
        pytest.skip("too large for the oracle")
    except Infeasible:
        with pytest.raises(Infeasible):
            solve(p)
        return
    sol, stats = solve(p)
    assert stats.optimal
    assert sol.objective == expected.objective
    assert_valid(p, sol)


@given(seed=st.integers(0, 10**6), n=st.integers(1, 3), window=st.integers(0, 4), span=st.integers(1, 3))
def test_matches_oracle_on_lattice_problems(seed, n, window, span):
    p = lattice_problem(seed, n_trains=n, max_window=window, span=span)
    try:
        expected = brute_force_oracle(p, cap=2 * 10**5)
    except TooLarge:
        return
    except Infeasible:
        with pytest.raises(Infeasible):
            solve(p)
        return
    sol, _ = solve(p)
    assert sol.objective == expected.objective
    assert_valid(p, sol)


@given(mseed=st.integers(0, 10**4), d=st.integers(5, 40))
def test_desk_solutions_valid_and_scope_monotone(mseed, d):
    infra, schedule = desk_instance(mseed % 3)
    m = draw_malfunction(schedule, 8, d, seed=mseed)
    full = build_full_problem(infra, schedule, m, CostWeights(30, 1), max_window=40)
    sol, stats = solve(full, budget=Budget(time_limit=None, node_limit=20000))
    if not stats.optimal:
        return
    assert_valid(full, sol)
    # freezing every non-malfunction train cannot do better
    directive = ScopeDirective("x", {t: frozen_to(r) for t, r in schedule.runs.items() if t != m.train_id},
                               frozenset({m.train_id}))
    try:
        restricted = apply_scope(full, directive)
        rsol, rstats = solve(restricted, budget=Budget(time_limit=None, node_limit=20000))
    except Infeasible:
        return
    if rstats.optimal:
        assert rsol.objective >= sol.objective
