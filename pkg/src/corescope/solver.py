"""Exact solver for scoped re-scheduling problems, plus a brute-force oracle.

The solver is a best-first branch and bound. A search node fixes a route for
some trains and a set of ordering constraints between holds of fixed trains;
unfixed trains are assumed to take their cheapest standalone plan. Entry times
are the earliest ones consistent with the constraints, which makes the node's
cost a lower bound on every completion. Branching resolves the earliest
remaining resource conflict, first by fixing a route, then by ordering.
"""
from __future__ import annotations

import heapq
import itertools
import time
from collections import defaultdict
from dataclasses import dataclass, field

from corescope.errors import Infeasible, TooLarge
from corescope.resched import CostWeights, ScopedProblem, Solution, TrainProblem, route_changes, train_cost
from corescope.routing import Path, resource_of
from corescope.scheduling import TrainRun


@dataclass(frozen=True)
class Budget:
    time_limit: float | None = 200.0
    node_limit: int | None = None


@dataclass
class SolveStats:
    elapsed: float = 0.0
    nodes_expanded: int = 0
    optimal: bool = False
    status: str = "unknown"
    lower_bound: float | None = None
    incumbent_trace: list[tuple[float, int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "elapsed": self.elapsed,
            "nodes_expanded": self.nodes_expanded,
            "optimal": self.optimal,
            "status": self.status,
            "lower_bound": self.lower_bound,
            "incumbent_trace": [list(x) for x in self.incumbent_trace],
        }


class _Train:
    """Per-train data shared by all search nodes."""

    def __init__(self, tp: TrainProblem, weights: CostWeights):
        self.tp = tp
        self.id = tp.train_id
        self.weights = weights
        self.paths: list[Path] = []
        self.base: list[tuple[int, ...]] = []
        self.leaves: list[int] = []
        self.cells: list[tuple] = []
        self.mind: list[tuple[int, ...]] = []
        self.lat: list[tuple[int, ...]] = []
        plans = []
        for path in tp.iter_paths():
            run = tp.earliest_run(path)
            if run is None:
                continue
            plans.append((train_cost(run, tp.scheduled, weights), path, run.times))
        plans.sort()
        for _c, path, times in plans:
            self.paths.append(path)
            self.base.append(times)
            self.leaves.append(route_changes(path, tp.scheduled.path))
            self.cells.append(tuple(resource_of(w) for w in path))
            self.mind.append(tuple(tp.min_duration(u) for u in path[:-1]))
            self.lat.append(tuple(tp.latest[v] for v in path))
        self.best_cost = plans[0][0] if plans else None

    def cost(self, p: int, times) -> int:
        w = self.weights
        late = max(0, times[-1] - self.tp.scheduled_arrival)
        return w.weight_lateness * late + w.weight_route_change * self.leaves[p]

    def holds(self, p: int, times) -> list[tuple]:
        cells = self.cells[p]
        n = len(times)
        return [(cells[i], times[i], times[i + 1] if i + 1 < n else times[i] + self.tp.steps_per_cell)
                for i in range(n)]


@dataclass
class _Node:
    route: tuple[int, ...]            # path index per train slot, -1 if unfixed
    times: tuple[tuple[int, ...] | None, ...]
    precs: tuple[tuple[int, int, int, int], ...]  # (slot a, hold i, slot b, hold j): b enters j after a leaves i
    lb: int
    depth: int


class _Search:
    def __init__(self, problem: ScopedProblem, weights: CostWeights):
        self.ids = sorted(problem.trains)
        self.trains = [_Train(problem.trains[t], weights) for t in self.ids]
        for tr in self.trains:
            if not tr.paths:
                raise Infeasible(f"train {tr.id} has no route within its windows")
        # Trains with one route and no slack can never move: index their holds once.
        self.static = [len(tr.paths) == 1 and tr.base[0] == tr.lat[0] for tr in self.trains]
        self.dynamic = [s for s, st in enumerate(self.static) if not st]
        self.fixed_holds: dict = defaultdict(list)
        for s, tr in enumerate(self.trains):
            if self.static[s]:
                for i, (cell, a, b) in enumerate(tr.holds(0, tr.base[0])):
                    self.fixed_holds[cell].append((a, b, s, i))
        for cell, hs in self.fixed_holds.items():
            hs.sort()
            for (a1, b1, s1, _), (a2, b2, s2, _) in zip(hs, hs[1:]):
                if a2 <= b1 and s1 != s2:
                    raise Infeasible(f"frozen trains {self.ids[s1]} and {self.ids[s2]} collide at {cell}")

    def root(self) -> _Node:
        route = tuple(0 if len(tr.paths) == 1 else -1 for tr in self.trains)
        times = tuple(tr.base[0] if r == 0 else None for tr, r in zip(self.trains, route))
        return _Node(route, times, (), sum(tr.best_cost for tr in self.trains), 0)

    def plan(self, node: _Node, s: int) -> tuple[int, tuple[int, ...]]:
        r = node.route[s]
        return (0, self.trains[s].base[0]) if r < 0 else (r, node.times[s])

    def first_conflict(self, node: _Node):
        """Earliest-starting overlap as (slot, hold, slot, hold), or None."""
        by_cell: dict = defaultdict(list)
        for s in self.dynamic:
            p, times = self.plan(node, s)
            for i, (cell, a, b) in enumerate(self.trains[s].holds(p, times)):
                by_cell[cell].append((a, b, s, i))
        best = None
        for cell, hs in by_cell.items():
            fixed = self.fixed_holds.get(cell, ())
            if len(hs) < 2 and not fixed:
                continue
            hs.sort()
            for x, (a1, b1, s1, i1) in enumerate(hs):
                for a2, b2, s2, i2 in hs[x + 1:]:
                    if a2 > b1:
                        break
                    if s1 != s2:
                        key = (a2, cell, s1, s2)
                        if best is None or key < best[0]:
                            best = (key, (s1, i1, s2, i2))
                        break
                for a2, b2, s2, i2 in fixed:
                    if a2 > b1:
                        break
                    if a1 <= b2:
                        first, second = ((s2, i2), (s1, i1)) if (a2, s2) < (a1, s1) else ((s1, i1), (s2, i2))
                        key = (max(a1, a2), cell, first[0], second[0])
                        if best is None or key < best[0]:
                            best = (key, (*first, *second))
                        break
        return None if best is None else best[1]

    def _lb(self, route, times) -> int:
        total = 0
        for s, tr in enumerate(self.trains):
            total += tr.best_cost if route[s] < 0 else tr.cost(route[s], times[s])
        return total

    def _propagate(self, route, times: list, precs, start: list[int]) -> bool:
        """Raise times until all ordering constraints hold; False if a window closes."""
        out = defaultdict(list)
        for a, i, b, j in precs:
            out[a].append((i, b, j))
        work = list(start)
        while work:
            a = work.pop()
            ta = times[a]
            n = len(ta)
            for i, b, j in out[a]:
                leave = ta[i + 1] if i + 1 < n else ta[i] + self.trains[a].tp.steps_per_cell
                tb = times[b]
                if tb[j] > leave:
                    continue
                tr = self.trains[b]
                p = route[b]
                new = list(tb)
                new[j] = leave + 1
                lat, mind = tr.lat[p], tr.mind[p]
                if new[j] > lat[j]:
                    return False
                for m in range(j + 1, len(new)):
                    need = new[m - 1] + mind[m - 1]
                    if new[m] >= need:
                        break
                    if need > lat[m]:
                        return False
                    new[m] = need
                times[b] = tuple(new)
                work.append(b)
        return True

    def children(self, node: _Node, conflict) -> list[_Node]:
        s1, i1, s2, i2 = conflict
        free = [s for s in (s1, s2) if node.route[s] < 0]
        kids = []
        if free:
            s = min(free)
            tr = self.trains[s]
            for p in range(len(tr.paths)):
                route = node.route[:s] + (p,) + node.route[s + 1:]
                times = node.times[:s] + (tr.base[p],) + node.times[s + 1:]
                kids.append(_Node(route, times, node.precs, self._lb(route, times), node.depth + 1))
            return kids
        for a, i, b, j in ((s1, i1, s2, i2), (s2, i2, s1, i1)):
            precs = node.precs + ((a, i, b, j),)
            times = list(node.times)
            if not self._propagate(node.route, times, precs, [a]):
                continue
            times = tuple(times)
            kids.append(_Node(node.route, times, precs, self._lb(node.route, times), node.depth + 1))
        return kids

    def solution(self, node: _Node) -> Solution:
        runs = {}
        for s, tr in enumerate(self.trains):
            p, times = self.plan(node, s)
            runs[tr.id] = TrainRun(tr.id, tuple(zip(tr.paths[p], times)), tr.tp.steps_per_cell)
        return Solution(runs, True, node.lb)


def solve(problem: ScopedProblem, weights: CostWeights | None = None, budget: Budget | None = None,
          seed: int = 0) -> tuple[Solution, SolveStats]:
    """Minimum-cost conflict-free assignment of a scoped problem.

    The search is deterministic; ``seed`` is accepted for interface symmetry.
    Raises :class:`Infeasible` once the search space is exhausted without a
    solution. When the budget runs out the best incumbent is returned with
    ``stats.optimal`` false, or an infeasible-marked empty solution if none.
    """
    weights = weights or problem.weights
    budget = budget or Budget()
    t0 = time.perf_counter()
    stats = SolveStats()
    search = _Search(problem, weights)
    counter = itertools.count()

    def out_of_budget() -> bool:
        if budget.node_limit is not None and stats.nodes_expanded >= budget.node_limit:
            return True
        return budget.time_limit is not None and time.perf_counter() - t0 > budget.time_limit

    def finish(status: str, node: _Node | None, lb) -> tuple[Solution, SolveStats]:
        stats.elapsed = time.perf_counter() - t0
        stats.status = status
        stats.optimal = status == "optimal"
        stats.lower_bound = lb
        if node is None:
            return Solution({}, False, None), stats
        return search.solution(node), stats

    root = search.root()
    incumbent: _Node | None = None

    # Greedy dive for an early incumbent.
    node = root
    while not out_of_budget():
        conflict = search.first_conflict(node)
        if conflict is None:
            incumbent = node
            stats.incumbent_trace.append((time.perf_counter() - t0, stats.nodes_expanded, node.lb))
            break
        kids = search.children(node, conflict)
        stats.nodes_expanded += 1
        if not kids:
            break
        node = min(kids, key=lambda k: k.lb)

    heap = [(root.lb, 0, next(counter), root)]
    while heap:
        lb, _, _, node = heapq.heappop(heap)
        if incumbent is not None and lb >= incumbent.lb:
            return finish("optimal", incumbent, incumbent.lb)
        if out_of_budget():
            return finish("budget", incumbent, lb)
        conflict = search.first_conflict(node)
        if conflict is None:
            incumbent = node
            stats.incumbent_trace.append((time.perf_counter() - t0, stats.nodes_expanded, node.lb))
            return finish("optimal", incumbent, node.lb)
        stats.nodes_expanded += 1
        for kid in search.children(node, conflict):
            if incumbent is None or kid.lb < incumbent.lb:
                heapq.heappush(heap, (kid.lb, -kid.depth, next(counter), kid))
    if incumbent is not None:
        return finish("optimal", incumbent, incumbent.lb)
    stats.elapsed = time.perf_counter() - t0
    stats.status = "infeasible"
    raise Infeasible(f"no conflict-free assignment exists ({stats.nodes_expanded} nodes explored)")


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def _count_timings(tp: TrainProblem, path: Path) -> int:
    """Number of time vectors along ``path`` respecting windows and minimum durations."""
    n = len(path)
    last = path[-1]
    ways = {t: 1 for t in range(tp.earliest[last], tp.latest[last] + 1)}
    for i in range(n - 2, -1, -1):
        v, md = path[i], tp.min_duration(path[i])
        nxt = ways
        hi_next = max(nxt) if nxt else -1
        suffix, acc = {}, 0
        for t in range(hi_next, min(nxt, default=0) - 1, -1):
            acc += nxt.get(t, 0)
            suffix[t] = acc
        lo_next = min(nxt, default=0)
        ways = {}
        for t in range(tp.earliest[v], tp.latest[v] + 1):
            start = max(t + md, lo_next)
            c = suffix.get(start, 0)
            if c:
                ways[t] = c
    return sum(ways.values())


def _timings(tp: TrainProblem, path: Path):
    n = len(path)
    times = [0] * n

    def rec(i: int, lo: int):
        v = path[i]
        for t in range(max(lo, tp.earliest[v]), tp.latest[v] + 1):
            times[i] = t
            if i + 1 == n:
                yield tuple(times)
            else:
                yield from rec(i + 1, t + tp.min_duration(v))

    yield from rec(0, tp.earliest[path[0]])


def count_plans(problem: ScopedProblem) -> dict[int, int]:
    return {t: sum(_count_timings(tp, p) for p in tp.iter_paths()) for t, tp in problem.trains.items()}


def brute_force_oracle(problem: ScopedProblem, cap: int = 10**7) -> Solution:
    """Exhaustive minimum over all route and timing combinations.

    Raises :class:`TooLarge` when the number of combinations exceeds ``cap``
    and :class:`Infeasible` when no combination is conflict free.
    """
    weights = problem.weights
    counts = count_plans(problem)
    total = 1
    for c in counts.values():
        total *= c
    if total > cap:
        raise TooLarge(f"{total} combinations exceed the cap of {cap}")
    ids = sorted(problem.trains)
    plans = []
    for t in ids:
        tp = problem.trains[t]
        mine = []
        for path in tp.iter_paths():
            for times in _timings(tp, path):
                run = TrainRun(t, tuple(zip(path, times)), tp.steps_per_cell)
                mine.append((train_cost(run, tp.scheduled, weights), run, tuple(run.holds())))
        mine.sort(key=lambda x: x[0])
        if not mine:
            raise Infeasible(f"train {t} has no plan within its windows")
        plans.append(mine)

    def compatible(holds, occupied) -> bool:
        for cell, s, e in holds:
            for s2, e2 in occupied.get(cell, ()):
                if s <= e2 and s2 <= e:
                    return False
        return True

    best: list = [None, None]

    def rec(k: int, acc: int, chosen: list, occupied: dict):
        if best[0] is not None and acc >= best[0]:
            return
        if k == len(ids):
            best[0], best[1] = acc, list(chosen)
            return
        for c, run, holds in plans[k]:
            if best[0] is not None and acc + c >= best[0]:
                break
            if not compatible(holds, occupied):
                continue
            for cell, s, e in holds:
                occupied.setdefault(cell, []).append((s, e))
            chosen.append(run)
            rec(k + 1, acc + c, chosen, occupied)
            chosen.pop()
            for cell, _s, _e in holds:
                occupied[cell].pop()

    rec(0, 0, [], {})
    if best[0] is None:
        raise Infeasible("no conflict-free combination")
    return Solution({r.train_id: r for r in best[1]}, True, best[0])
