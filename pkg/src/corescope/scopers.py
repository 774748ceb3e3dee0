"""The six scope restrictions.

Online scopers see only the schedule and the malfunction; offline scopers also
receive the unrestricted re-schedule. The constructors' signatures enforce that.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field

from corescope.gridgen import Waypoint
from corescope.resched import Malfunction, Solution
from corescope.scheduling import Schedule, TrainRun

ONLINE = ("online_unrestricted", "heuristic", "random")
OFFLINE = ("upper_bound", "max_speedup", "baseline")
SCOPERS = ("online_unrestricted", "upper_bound", "max_speedup", "baseline", "heuristic", "random")


@dataclass(frozen=True)
class TrainScope:
    """``edges=None`` keeps the train's full route graph; ``pins`` fix entry times."""

    edges: frozenset | None = None
    pins: tuple[tuple[Waypoint, int], ...] = ()

    @property
    def mode(self) -> str:
        if self.edges is None and not self.pins:
            return "free"
        if self.edges is not None and len(self.pins) == len({u for e in self.edges for u in e}):
            return "frozen"
        return "restricted"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "edges": None if self.edges is None else sorted([list(u), list(v)] for u, v in self.edges),
            "pins": [[*w, t] for w, t in self.pins],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainScope":
        edges = None if d["edges"] is None else frozenset((tuple(u), tuple(v)) for u, v in d["edges"])
        return cls(edges, tuple(((r, c, h), t) for r, c, h, t in d["pins"]))


@dataclass
class ScopeDirective:
    kind: str
    trains: dict[int, TrainScope]
    selected: frozenset[int]
    offline: bool = False
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "offline": self.offline,
            "selected": sorted(self.selected),
            "trains": {str(t): s.to_dict() for t, s in sorted(self.trains.items())},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScopeDirective":
        return cls(d["kind"], {int(t): TrainScope.from_dict(s) for t, s in d["trains"].items()},
                   frozenset(d["selected"]), d["offline"], d.get("metadata", {}))


def path_edges(run: TrainRun) -> frozenset:
    p = run.path
    return frozenset(zip(p, p[1:]))


def frozen_to(run: TrainRun) -> TrainScope:
    return TrainScope(path_edges(run), tuple(run.waypoints))


def changed_trains(schedule: Schedule, solution: Solution) -> frozenset[int]:
    """Trains whose route or any entry time differs from the schedule."""
    return frozenset(t for t, run in solution.runs.items() if run.waypoints != schedule.runs[t].waypoints)


def scope_online_unrestricted(schedule: Schedule, malfunction: Malfunction) -> ScopeDirective:
    return ScopeDirective("online_unrestricted", {t: TrainScope() for t in schedule.runs},
                          frozenset(schedule.runs))


def scope_upper_bound(unrestricted: Solution, schedule: Schedule | None = None) -> ScopeDirective:
    selected = changed_trains(schedule, unrestricted) if schedule is not None else frozenset(unrestricted.runs)
    return ScopeDirective("upper_bound", {t: frozen_to(r) for t, r in unrestricted.runs.items()}, selected,
                          offline=True)


def scope_max_speedup(schedule: Schedule, unrestricted: Solution) -> ScopeDirective:
    trains = {}
    for t, run in unrestricted.runs.items():
        sched = schedule.runs[t]
        same = set(sched.waypoints) & set(run.waypoints)
        pins = tuple(wt for wt in run.waypoints if wt in same)
        trains[t] = TrainScope(path_edges(sched) | path_edges(run), pins)
    return ScopeDirective("max_speedup", trains, changed_trains(schedule, unrestricted), offline=True)


def scope_baseline(schedule: Schedule, unrestricted: Solution) -> ScopeDirective:
    changed = changed_trains(schedule, unrestricted)
    trains = {t: (TrainScope() if t in changed else frozen_to(schedule.runs[t])) for t in schedule.runs}
    return ScopeDirective("baseline", trains, changed, offline=True)


def transmission_chains(schedule: Schedule, malfunction: Malfunction) -> dict[int, int]:
    """Delay estimate per affected train, propagated along scheduled holds.

    An affected train releasing a cell ``delay`` steps late delays every train
    scheduled to enter that cell after the scheduled release but no later than
    the delayed one, by the overshoot. Iterated to a fixpoint.
    """
    holds = {t: run.holds() for t, run in schedule.runs.items()}
    by_cell: dict = defaultdict(list)
    for t, hs in holds.items():
        for cell, s, e in hs:
            by_cell[cell].append((s, e, t))
    a = malfunction.train_id
    delay = {a: malfunction.duration}
    since = {a: malfunction.time_step}
    work = [a]
    while work:
        src = work.pop()
        for cell, s, e in holds[src]:
            if e < since[src]:
                continue
            release = e + delay[src]
            for s2, _e2, other in by_cell[cell]:
                if other == src or not e < s2 <= release:
                    continue
                d = release - s2 + 1
                if d > delay.get(other, 0) or s2 < since.get(other, s2 + 1):
                    delay[other] = max(d, delay.get(other, 0))
                    since[other] = min(s2, since.get(other, s2))
                    work.append(other)
    return delay


def scope_heuristic(schedule: Schedule, malfunction: Malfunction, infra=None,
                    route_restricted: bool = False) -> ScopeDirective:
    affected = frozenset(transmission_chains(schedule, malfunction))
    trains = {}
    for t, run in schedule.runs.items():
        if t not in affected:
            trains[t] = frozen_to(run)
        elif route_restricted:
            trains[t] = TrainScope(path_edges(run))
        else:
            trains[t] = TrainScope()
    return ScopeDirective("heuristic", trains, affected, metadata={"route_restricted": route_restricted})


def scope_random(schedule: Schedule, malfunction: Malfunction, n: int, seed: int) -> ScopeDirective:
    """``n`` trains chosen uniformly, always including the malfunctioning one."""
    if not 1 <= n <= len(schedule.runs):
        raise ValueError(f"n must be in [1, {len(schedule.runs)}], got {n}")
    rng = random.Random(seed)
    others = sorted(t for t in schedule.runs if t != malfunction.train_id)
    selected = frozenset([malfunction.train_id, *rng.sample(others, n - 1)])
    trains = {t: (TrainScope() if t in selected else frozen_to(run)) for t, run in schedule.runs.items()}
    return ScopeDirective("random", trains, selected, metadata={"seed": seed, "n": n})
