"""Per-experiment measurements."""
from __future__ import annotations

from dataclasses import dataclass

from corescope.resched import Solution
from corescope.scheduling import Schedule

# perf_counter resolution floor used when a solve reports zero time
TIME_RESOLUTION = 1e-6


def speedup(t_full: float, t_restricted: float) -> float:
    return max(t_full, TIME_RESOLUTION) / max(t_restricted, TIME_RESOLUTION)


@dataclass(frozen=True)
class CoreProblem:
    trains: frozenset[int]
    nodes: frozenset[tuple[int, tuple[int, int, int]]]   # (train, waypoint) entered at a changed time or place


def core_problem(schedule: Schedule, solution: Solution) -> CoreProblem:
    """Trains and train-waypoints whose scheduled assignment the re-schedule changes."""
    trains, nodes = set(), set()
    for t, run in solution.runs.items():
        before = set(schedule.runs[t].waypoints)
        diff = {(t, w) for w, tm in run.waypoints if (w, tm) not in before}
        diff |= {(t, w) for w, tm in schedule.runs[t].waypoints if (w, tm) not in set(run.waypoints)}
        if diff:
            trains.add(t)
            nodes |= diff
    return CoreProblem(frozenset(trains), frozenset(nodes))


@dataclass(frozen=True)
class Prediction:
    tp: int
    fp: int
    fn: int
    tn: int
    vacuous: bool

    @property
    def f1(self) -> float:
        if self.vacuous:
            return 1.0
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0


def prediction_quality(predicted, changed, universe) -> Prediction:
    """Confusion counts of a predicted changed-train set against the true one.

    With nothing predicted and nothing changed the score is vacuously perfect.
    """
    predicted, changed, universe = set(predicted), set(changed), set(universe)
    tp = len(predicted & changed)
    fp = len(predicted - changed)
    fn = len(changed - predicted)
    tn = len(universe - predicted - changed)
    return Prediction(tp, fp, fn, tn, tp == fp == fn == 0)


@dataclass(frozen=True)
class Lateness:
    value: float
    unproven: bool


def additional_lateness(scoped_cost: float, optimal_cost: float, scoped_proven: bool = True,
                        optimal_proven: bool = True) -> Lateness:
    """Objective gap of a scoped solve over the unrestricted one."""
    return Lateness(scoped_cost - optimal_cost, not (scoped_proven and optimal_proven))


def total_delay(schedule: Schedule, solution: Solution) -> int:
    return sum(max(0, r.arrival - schedule.runs[t].arrival) for t, r in solution.runs.items())
