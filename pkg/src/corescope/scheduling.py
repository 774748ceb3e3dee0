"""Initial conflict-free schedules via prioritized planning."""
from __future__ import annotations

import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field

from corescope.errors import Unschedulable
from corescope.gridgen import Cell, Infrastructure, TopologyGraph, Waypoint, to_graph
from corescope.routing import Path, k_shortest_paths, resource_of

SCHEMA_VERSION = 1

Hold = tuple[Cell, int, int]  # resource, first step held, last step held (inclusive)


@dataclass(frozen=True)
class TrainRun:
    """Timed path of one train; ``waypoints`` holds (waypoint, entry time) pairs.

    A train holds each cell from its entry until it enters the next cell, both
    steps included; the target cell is held for ``steps_per_cell`` steps.
    """

    train_id: int
    waypoints: tuple[tuple[Waypoint, int], ...]
    steps_per_cell: int = 1

    @property
    def path(self) -> Path:
        return tuple(w for w, _ in self.waypoints)

    @property
    def times(self) -> tuple[int, ...]:
        return tuple(t for _, t in self.waypoints)

    @property
    def departure(self) -> int:
        return self.waypoints[0][1]

    @property
    def arrival(self) -> int:
        return self.waypoints[-1][1]

    def holds(self) -> list[Hold]:
        out = []
        wps = self.waypoints
        for i, (wp, t) in enumerate(wps):
            end = wps[i + 1][1] if i + 1 < len(wps) else t + self.steps_per_cell
            out.append((resource_of(wp), t, end))
        return out

    def to_dict(self) -> dict:
        return {
            "train_id": self.train_id,
            "steps_per_cell": self.steps_per_cell,
            "waypoints": [[w[0], w[1], w[2], t] for w, t in self.waypoints],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRun":
        return cls(d["train_id"], tuple(((r, c, h), t) for r, c, h, t in d["waypoints"]), d["steps_per_cell"])

    @classmethod
    def along(cls, train_id: int, path: Path, departure: int, steps_per_cell: int) -> "TrainRun":
        return cls(train_id, tuple((w, departure + i * steps_per_cell) for i, w in enumerate(path)), steps_per_cell)


@dataclass
class Schedule:
    schedule_id: str
    runs: dict[int, TrainRun]
    horizon: int
    infra_id: str = "0"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def total_run_time(self) -> int:
        return sum(r.arrival for r in self.runs.values())

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "schedule_id": self.schedule_id,
            "infra_id": self.infra_id,
            "seed": self.seed,
            "horizon": self.horizon,
            "metadata": self.metadata,
            "runs": [self.runs[t].to_dict() for t in sorted(self.runs)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        if d.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schedule schema version {d.get('version')!r}")
        runs = {r["train_id"]: TrainRun.from_dict(r) for r in d["runs"]}
        return cls(d["schedule_id"], runs, d["horizon"], d["infra_id"], d["seed"], d.get("metadata", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


@dataclass(frozen=True)
class Conflict:
    resource: Cell
    train_a: int
    train_b: int
    overlap: tuple[int, int]


def find_conflicts(runs) -> list[Conflict]:
    """Pairwise overlaps of holds on the same cell between distinct trains."""
    by_cell: dict[Cell, list[tuple[int, int, int]]] = defaultdict(list)
    for run in runs:
        for cell, s, e in run.holds():
            by_cell[cell].append((s, e, run.train_id))
    out = []
    for cell in sorted(by_cell):
        hs = sorted(by_cell[cell])
        for i, (s1, e1, a) in enumerate(hs):
            for s2, e2, b in hs[i + 1:]:
                if s2 > e1:
                    break
                if a != b:
                    lo, hi = min(a, b), max(a, b)
                    out.append(Conflict(cell, lo, hi, (max(s1, s2), min(e1, e2))))
    return out


def verify_conflict_free(schedule: Schedule, infra: Infrastructure | None = None) -> list[Conflict]:
    return find_conflicts(schedule.runs.values())


def run_violations(run: TrainRun, graph: TopologyGraph) -> list[str]:
    """Structural problems with a run: non-edges, too-fast moves, out-of-order times."""
    out = []
    for (u, tu), (v, tv) in zip(run.waypoints, run.waypoints[1:]):
        if v not in graph.succ.get(u, ()):
            out.append(f"train {run.train_id}: {u} -> {v} is not a legal move")
        if tv - tu < run.steps_per_cell:
            out.append(f"train {run.train_id}: {u} -> {v} takes {tv - tu} < {run.steps_per_cell} steps")
    return out


def _earliest_departure(path: Path, dur: int, reserved: dict[Cell, list[tuple[int, int]]],
                        latest_end: int) -> int | None:
    offsets = [(resource_of(w), i * dur, (i + 1) * dur) for i, w in enumerate(path)]
    dep = 0
    while True:
        if offsets[-1][2] + dep > latest_end:
            return None
        shift = dep
        for cell, a, b in offsets:
            for rs, re in reserved.get(cell, ()):
                if rs <= dep + b and dep + a <= re:
                    shift = max(shift, re - a + 1)
        if shift == dep:
            return dep
        dep = shift


def default_horizon(infra: Infrastructure, paths: dict[int, list[Path]], slack: float = 2.0,
                    cap: int | None = None) -> int:
    longest = max(len(ps[0]) * infra.train(t).steps_per_cell for t, ps in paths.items())
    horizon = math.ceil(slack * longest)
    return min(horizon, cap) if cap else horizon


def generate_schedule(infra: Infrastructure, horizon: int | None = None, seed: int = 0, k: int = 1,
                      slack: float = 2.0, horizon_cap: int | None = None, max_restarts: int = 20,
                      schedule_id: str = "0", graph: TopologyGraph | None = None) -> Schedule:
    """Prioritized planning: trains in a seeded random order each take the earliest
    conflict-free departure on the best of their ``k`` shortest paths.

    Waiting happens only before departure, so every run has minimum duration.
    """
    graph = graph or to_graph(infra)
    paths = {t.train_id: k_shortest_paths(graph, t.start, graph.nodes_at(t.target), k) for t in infra.trains}
    if horizon is None:
        horizon = default_horizon(infra, paths, slack, horizon_cap)
    rng = random.Random(seed)
    ids = sorted(paths)
    for restart in range(max_restarts):
        order = ids[:]
        rng.shuffle(order)
        reserved: dict[Cell, list[tuple[int, int]]] = defaultdict(list)
        runs: dict[int, TrainRun] = {}
        for tid in order:
            dur = infra.train(tid).steps_per_cell
            best = None
            for path in paths[tid]:
                dep = _earliest_departure(path, dur, reserved, horizon)
                if dep is None:
                    continue
                arrival = dep + (len(path) - 1) * dur
                if best is None or arrival < best[0]:
                    best = (arrival, dep, path)
            if best is None:
                break
            run = TrainRun.along(tid, best[2], best[1], dur)
            runs[tid] = run
            for cell, s, e in run.holds():
                reserved[cell].append((s, e))
        else:
            schedule = Schedule(schedule_id, runs, horizon, infra.infra_id, seed)
            schedule.metadata = {
                "total_run_time": schedule.total_run_time,
                "restarts": restart,
                "priority_order": order,
                "paths_per_train": k,
            }
            return schedule
    raise Unschedulable(f"no conflict-free schedule within horizon {horizon} after {max_restarts} restarts")
