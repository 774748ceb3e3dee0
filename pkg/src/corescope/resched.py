"""Rescheduling problem: malfunctions, scoped problems and the objective."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

from corescope.errors import InapplicableMalfunction, InfeasibleFreeze
from corescope.gridgen import Infrastructure, TopologyGraph, Waypoint, to_graph
from corescope.routing import Path, RouteDag, dag_from_paths, k_shortest_paths
from corescope.scheduling import Schedule, TrainRun

if TYPE_CHECKING:
    from corescope.scopers import ScopeDirective


@dataclass(frozen=True)
class Malfunction:
    train_id: int
    time_step: int
    duration: int

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"malfunction duration must be positive, got {self.duration}")
        if self.time_step < 0:
            raise ValueError("malfunction time must be non-negative")

    @property
    def key(self) -> str:
        return f"a{self.train_id}_t{self.time_step}_d{self.duration}"

    def to_dict(self) -> dict:
        return {"train_id": self.train_id, "time_step": self.time_step, "duration": self.duration}

    @classmethod
    def from_dict(cls, d: dict) -> "Malfunction":
        return cls(d["train_id"], d["time_step"], d["duration"])


@dataclass(frozen=True)
class CostWeights:
    weight_route_change: int = 30
    weight_lateness: int = 1

    def __post_init__(self):
        if self.weight_route_change < 0 or self.weight_lateness < 0:
            raise ValueError("cost weights must be non-negative")


def malfunction_for(schedule: Schedule, train_id: int, earliest_malfunction: int, duration: int) -> Malfunction:
    run = schedule.runs[train_id]
    t = run.departure + earliest_malfunction
    if t >= run.arrival:
        raise InapplicableMalfunction(
            f"train {train_id} arrives at {run.arrival}, before malfunction time {t}"
        )
    return Malfunction(train_id, t, duration)


def draw_malfunction(schedule: Schedule, earliest_malfunction: int, duration: int | tuple[int, int],
                     seed: int, max_draws: int = 50) -> Malfunction:
    """Uniform train, onset once it has run ``earliest_malfunction`` steps.

    ``duration`` is either fixed or an inclusive (low, high) range drawn uniformly.
    """
    if not schedule.runs:
        raise ValueError("empty schedule")
    rng = random.Random(seed)
    ids = sorted(schedule.runs)
    for _ in range(max_draws):
        tid = rng.choice(ids)
        d = rng.randint(*duration) if isinstance(duration, (tuple, list)) else duration
        try:
            return malfunction_for(schedule, tid, earliest_malfunction, d)
        except InapplicableMalfunction:
            continue
    raise InapplicableMalfunction(f"no train runs longer than {earliest_malfunction} steps after {max_draws} draws")


# ---------------------------------------------------------------------------
# Scoped problem
# ---------------------------------------------------------------------------


@dataclass
class TrainProblem:
    """One train's share of a rescheduling problem.

    ``earliest``/``latest`` bound the entry time of every node; frozen nodes have
    equal bounds. ``halt`` adds steps to every move out of a node (the
    malfunction). Only nodes on some source-to-sink path are kept.
    """

    train_id: int
    steps_per_cell: int
    source: Waypoint
    sinks: frozenset[Waypoint]
    succ: dict[Waypoint, tuple[Waypoint, ...]]
    earliest: dict[Waypoint, int]
    latest: dict[Waypoint, int]
    halt: dict[Waypoint, int]
    scheduled: TrainRun

    @property
    def frozen(self) -> frozenset[Waypoint]:
        return frozenset(v for v in self.succ if self.earliest[v] == self.latest[v])

    @property
    def scheduled_arrival(self) -> int:
        return self.scheduled.arrival

    def min_duration(self, u: Waypoint) -> int:
        return self.steps_per_cell + self.halt.get(u, 0)

    def topological_order(self) -> list[Waypoint]:
        return RouteDag(self.train_id, self.source, self.sinks, self.succ, self.steps_per_cell).topological_order()

    def iter_paths(self) -> Iterator[Path]:
        return RouteDag(self.train_id, self.source, self.sinks, self.succ, self.steps_per_cell).iter_paths()

    def earliest_run(self, path: Path) -> TrainRun | None:
        """Run along ``path`` entering every node as early as the windows allow."""
        times = []
        t = None
        for i, v in enumerate(path):
            t = self.earliest[v] if i == 0 else max(self.earliest[v], t + self.min_duration(path[i - 1]))
            if t > self.latest[v]:
                return None
            times.append(t)
        return TrainRun(self.train_id, tuple(zip(path, times)), self.steps_per_cell)

    def contains(self, run: TrainRun) -> bool:
        """Whether ``run`` is a valid assignment of this train's problem."""
        path = run.path
        if path[0] != self.source or path[-1] not in self.sinks:
            return False
        for i, (v, t) in enumerate(run.waypoints):
            if v not in self.succ or not self.earliest[v] <= t <= self.latest[v]:
                return False
            if i:
                u, tu = run.waypoints[i - 1]
                if v not in self.succ[u] or t - tu < self.min_duration(u):
                    return False
        return True

    def to_dict(self) -> dict:
        nodes = sorted(self.succ)
        return {
            "train_id": self.train_id,
            "steps_per_cell": self.steps_per_cell,
            "source": list(self.source),
            "sinks": sorted(list(s) for s in self.sinks),
            "nodes": [[*v, self.earliest[v], self.latest[v]] for v in nodes],
            "edges": [[list(u), list(v)] for u in nodes for v in self.succ[u]],
            "halt": [[*v, x] for v, x in sorted(self.halt.items())],
            "scheduled": self.scheduled.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainProblem":
        succ: dict[Waypoint, list[Waypoint]] = {}
        earliest, latest = {}, {}
        for r, c, h, e, l in d["nodes"]:
            succ[(r, c, h)] = []
            earliest[(r, c, h)] = e
            latest[(r, c, h)] = l
        for u, v in d["edges"]:
            succ[tuple(u)].append(tuple(v))
        return cls(
            d["train_id"], d["steps_per_cell"], tuple(d["source"]), frozenset(tuple(s) for s in d["sinks"]),
            {u: tuple(vs) for u, vs in succ.items()}, earliest, latest,
            {(r, c, h): x for r, c, h, x in d["halt"]}, TrainRun.from_dict(d["scheduled"]),
        )


@dataclass
class ScopedProblem:
    trains: dict[int, TrainProblem]
    malfunction: Malfunction
    weights: CostWeights
    max_window: int
    scope: str = "full"

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "malfunction": self.malfunction.to_dict(),
            "weights": {"weight_route_change": self.weights.weight_route_change,
                        "weight_lateness": self.weights.weight_lateness},
            "max_window": self.max_window,
            "trains": [self.trains[t].to_dict() for t in sorted(self.trains)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScopedProblem":
        return cls(
            {t["train_id"]: TrainProblem.from_dict(t) for t in d["trains"]},
            Malfunction.from_dict(d["malfunction"]), CostWeights(**d["weights"]), d["max_window"], d["scope"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def search_space(self) -> dict[int, tuple[int, int]]:
        """Per train: (number of routes, total window width over nodes)."""
        return {
            t: (sum(1 for _ in tp.iter_paths()), sum(tp.latest[v] - tp.earliest[v] for v in tp.succ))
            for t, tp in self.trains.items()
        }


@dataclass
class Solution:
    runs: dict[int, TrainRun]
    feasible: bool = True
    objective: float | None = None

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "objective": self.objective,
            "runs": [self.runs[t].to_dict() for t in sorted(self.runs)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        return cls({r["train_id"]: TrainRun.from_dict(r) for r in d["runs"]}, d["feasible"], d["objective"])


def _forward_windows(succ, source: Waypoint, order: list[Waypoint], start: int, steps: int,
                     halt: dict[Waypoint, int], lower: dict[Waypoint, int] | None,
                     upper: dict[Waypoint, int] | None, pins: dict[Waypoint, int]):
    """Earliest entry per node by DAG relaxation; nodes whose window closes are dropped."""
    earliest: dict[Waypoint, int] = {}
    alive = set()
    preds: dict[Waypoint, list[Waypoint]] = {}
    for u in order:
        for v in succ[u]:
            preds.setdefault(v, []).append(u)
    for v in order:
        if v == source:
            e = start
        else:
            cands = [earliest[u] + steps + halt.get(u, 0) for u in preds.get(v, ()) if u in alive]
            if not cands:
                continue
            e = min(cands)
        if lower is not None:
            e = max(e, lower[v])
        if v in pins:
            if pins[v] < e or (upper is not None and pins[v] > upper[v]):
                continue
            e = pins[v]
        if upper is not None and e > upper[v]:
            continue
        earliest[v] = e
        alive.add(v)
    return earliest


def _prune(succ, source: Waypoint, sinks, keep: set[Waypoint]) -> dict[Waypoint, tuple[Waypoint, ...]]:
    """Subgraph on ``keep`` of nodes reachable from source and reaching a sink."""
    fwd = set()
    stack = [source] if source in keep else []
    while stack:
        u = stack.pop()
        if u in fwd:
            continue
        fwd.add(u)
        stack.extend(v for v in succ.get(u, ()) if v in keep and v not in fwd)
    good = {v for v in fwd if v in sinks}
    changed = True
    order = sorted(fwd)
    while changed:
        changed = False
        for u in order:
            if u not in good and any(v in good for v in succ[u]):
                good.add(u)
                changed = True
    return {u: tuple(v for v in succ[u] if v in good) for u in sorted(good)}


def build_train_problem(dag: RouteDag, scheduled: TrainRun, malfunction: Malfunction,
                        max_window: int) -> TrainProblem:
    steps = dag.duration
    wps = scheduled.waypoints
    t_m = malfunction.time_step
    is_malfunctioning = malfunction.train_id == dag.train_id
    prefix = [(w, t) for w, t in wps if t <= t_m]
    halt: dict[Waypoint, int] = {}
    pins: dict[Waypoint, int] = dict(prefix)
    succ = {u: tuple(vs) for u, vs in dag.succ.items()}
    dep = scheduled.departure
    source = dag.source
    if is_malfunctioning:
        if prefix and len(prefix) < len(wps):
            halt[prefix[-1][0]] = malfunction.duration
        elif not prefix:
            dep = max(dep, t_m + malfunction.duration)
    if prefix:
        keep_prefix = [w for w, _ in prefix]
        cur = keep_prefix[-1]
        reach = set()
        stack = [cur]
        while stack:
            u = stack.pop()
            if u not in reach:
                reach.add(u)
                stack.extend(succ[u])
        keep = set(keep_prefix) | reach
        # realised prefix is the only way to the current node
        for a, b in zip(keep_prefix, keep_prefix[1:]):
            succ[a] = (b,)
        if len(prefix) == len(wps):
            succ[cur] = ()
    else:
        keep = set(succ)
    sinks = dag.sinks if len(prefix) < len(wps) else frozenset({wps[-1][0]})
    succ = _prune(succ, source, sinks, keep)
    order = RouteDag(dag.train_id, source, sinks, succ, steps).topological_order()
    earliest = _forward_windows(succ, source, order, dep, steps, halt, None, None, pins)
    succ = _prune(succ, source, sinks, set(earliest))
    earliest = {v: earliest[v] for v in succ}
    latest = {v: (pins[v] if v in pins else earliest[v] + max_window) for v in succ}
    return TrainProblem(dag.train_id, steps, source, frozenset(v for v in sinks if v in succ), succ,
                        earliest, latest, {v: x for v, x in halt.items() if v in succ}, scheduled)


def build_full_problem(infra: Infrastructure, schedule: Schedule, malfunction: Malfunction,
                       weights: CostWeights, k: int = 10, max_window: int = 60,
                       graph: TopologyGraph | None = None) -> ScopedProblem:
    """Unrestricted problem: every train on its k-path DAG (plus its scheduled path),
    realised prefixes up to the malfunction frozen, earliest times propagated from the
    halt, latest = earliest + ``max_window``.
    """
    graph = graph or to_graph(infra)
    trains = {}
    for tid in sorted(schedule.runs):
        spec = infra.train(tid)
        run = schedule.runs[tid]
        paths = k_shortest_paths(graph, spec.start, graph.nodes_at(spec.target), k)
        if run.path not in paths:
            paths = [run.path] + paths
        dag = dag_from_paths(tid, paths, spec.steps_per_cell)
        trains[tid] = build_train_problem(dag, run, malfunction, max_window)
    return ScopedProblem(trains, malfunction, weights, max_window, "full")


def restrict_train(tp: TrainProblem, edges: frozenset | None, pins: dict[Waypoint, int]) -> TrainProblem:
    """Intersect a train problem with an edge set and pinned entry times."""
    for v, t in pins.items():
        if v not in tp.succ:
            raise InfeasibleFreeze(f"train {tp.train_id}: pinned node {v} is not in its problem")
        if not tp.earliest[v] <= t <= tp.latest[v]:
            raise InfeasibleFreeze(
                f"train {tp.train_id}: pin {v}@{t} outside window [{tp.earliest[v]}, {tp.latest[v]}]"
            )
    succ = tp.succ
    if edges is not None:
        succ = {u: tuple(v for v in vs if (u, v) in edges) for u, vs in succ.items()}
    succ = _prune(succ, tp.source, tp.sinks, set(succ))
    if tp.source not in succ:
        raise InfeasibleFreeze(f"train {tp.train_id}: no route left in scope")
    order = RouteDag(tp.train_id, tp.source, tp.sinks, succ, tp.steps_per_cell).topological_order()
    earliest = _forward_windows(succ, tp.source, order, tp.earliest[tp.source], tp.steps_per_cell, tp.halt,
                                tp.earliest, tp.latest, pins)
    for v in pins:
        if v in succ and v not in earliest:
            raise InfeasibleFreeze(f"train {tp.train_id}: pinned node {v} unreachable in time")
    succ = _prune(succ, tp.source, tp.sinks, set(earliest))
    if tp.source not in succ:
        raise InfeasibleFreeze(f"train {tp.train_id}: no timely route left in scope")
    latest = {v: (pins[v] if v in pins else tp.latest[v]) for v in succ}
    return TrainProblem(tp.train_id, tp.steps_per_cell, tp.source, frozenset(s for s in tp.sinks if s in succ),
                        succ, {v: earliest[v] for v in succ}, latest,
                        {v: x for v, x in tp.halt.items() if v in succ}, tp.scheduled)


def apply_scope(full: ScopedProblem, directive: "ScopeDirective") -> ScopedProblem:
    trains = {}
    for tid, tp in full.trains.items():
        ts = directive.trains.get(tid)
        if ts is None or (ts.edges is None and not ts.pins):
            trains[tid] = tp
        else:
            trains[tid] = restrict_train(tp, ts.edges, dict(ts.pins))
    return ScopedProblem(trains, full.malfunction, full.weights, full.max_window, directive.kind)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def route_changes(path: Path, scheduled_path: Path) -> int:
    """Number of nodes at which ``path`` leaves the scheduled path."""
    on = set(scheduled_path)
    return sum(1 for u, v in zip(path, path[1:]) if u in on and v not in on)


def train_cost(run: TrainRun, scheduled: TrainRun, weights: CostWeights) -> int:
    late = max(0, run.arrival - scheduled.arrival)
    return weights.weight_lateness * late + weights.weight_route_change * route_changes(run.path, scheduled.path)


def cost(solution: Solution | dict[int, TrainRun], schedule: Schedule, weights: CostWeights):
    runs = solution.runs if isinstance(solution, Solution) else solution
    return sum(train_cost(runs[t], schedule.runs[t], weights) for t in sorted(runs))
