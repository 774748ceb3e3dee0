"""Experiment orchestration: agenda expansion, generation, scoper runs, storage, analysis.

Store layout (root from ``CORESCOPE_STORE`` unless given explicitly)::

    infra/{i}/infrastructure.json
    infra/{i}/schedule/{s}/schedule.json
    infra/{i}/schedule/{s}/resched/{m}/malfunction.json
    runs/{agenda_id}/agenda.json
    runs/{agenda_id}/experiments/{experiment_id}.json
    runs/{agenda_id}/metrics.csv
    runs/{agenda_id}/analysis/...
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import platform
import statistics
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from corescope.errors import (CoreScopeError, EmptyAgenda, GenerationFailed, Infeasible, InfeasibleFreeze,
                              InvalidRange, Unschedulable)
from corescope.gridgen import InfraParams, Infrastructure, generate_infrastructure, to_graph
from corescope.metrics import additional_lateness, core_problem, prediction_quality, speedup
from corescope.resched import (CostWeights, Malfunction, ScopedProblem, Solution, apply_scope, build_full_problem,
                               cost)
from corescope.scheduling import Schedule, find_conflicts, generate_schedule
from corescope.scopers import (ScopeDirective, scope_baseline, scope_heuristic, scope_max_speedup,
                               scope_online_unrestricted, scope_random, scope_upper_bound)
from corescope.solver import Budget, solve

log = logging.getLogger(__name__)

RESULT_VERSION = 1
TIMING_KEYS = frozenset({"elapsed", "speedup", "incumbent_trace", "environment"})
SCOPER_ORDER = ("online_unrestricted", "upper_bound", "max_speedup", "baseline", "heuristic", "random")


class EmptyAfterFilter(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Ranges and agendas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueRange:
    a: int
    b: int
    n: int


def expand_range(r: ValueRange | list | tuple) -> list[int]:
    """``n`` points from ``[a, b)`` with step ``(b - a) // n``; only ``a`` when ``n == 1``."""
    if not isinstance(r, ValueRange):
        if len(r) != 3:
            raise InvalidRange(f"range must be [a, b, n], got {r!r}")
        r = ValueRange(*r)
    if r.n < 1:
        raise InvalidRange(f"point count must be >= 1, got {r.n}")
    if r.n == 1:
        return [r.a]
    if r.b < r.a:
        raise InvalidRange(f"end {r.b} before start {r.a}")
    step = (r.b - r.a) // r.n
    return [r.a + i * step for i in range(r.n)]


def _values(v) -> list:
    """Scalar, [a, b, n] range, or {"values": [...]} explicit list."""
    if isinstance(v, dict) and "values" in v:
        return list(v["values"])
    if isinstance(v, (list, tuple)) and len(v) == 3 and all(isinstance(x, int) for x in v):
        return expand_range(v)
    return [v]


def _unique(xs: list) -> list:
    seen, out = set(), []
    for x in xs:
        key = json.dumps(x, sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(x)
    return out


INFRA_KEYS = ("width", "height", "flatland_seed_value", "max_num_cities", "max_rail_between_cities",
              "max_rail_in_city", "number_of_agents", "speed_data")


@dataclass
class AgendaConfig:
    """All knobs of an agenda; values in ``infra``/``schedule``/``reschedule`` may be ranges."""

    agenda_id: str = "desk"
    infra: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    reschedule: dict = field(default_factory=dict)
    runs: int = 1
    random_seeds: int = 5
    time_limit: float | None = 200.0
    node_limit: int | None = None
    timing_repeats: int = 1
    heuristic_route_restricted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgendaConfig":
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "AgendaConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def weights(self) -> CostWeights:
        r = self.reschedule
        return CostWeights(r.get("weight_route_change", 30), r.get("weight_lateness_seconds", 1))

    @property
    def budget(self) -> Budget:
        return Budget(self.time_limit, self.node_limit)


PAPER_SPEED_DATA = {"1": 0.25, "1/2": 0.25, "1/3": 0.25, "1/4": 0.25}


def paper_config() -> AgendaConfig:
    """Full-scale parameter grid (12 infrastructures x 4 schedules, one malfunction per train)."""
    return AgendaConfig(
        agenda_id="paper",
        infra={
            "width": 100, "height": 100, "flatland_seed_value": [190, 190, 1],
            "max_num_cities": [8, 15, 3], "max_rail_between_cities": 1, "max_rail_in_city": 2,
            "number_of_agents": [50, 98, 4], "speed_data": PAPER_SPEED_DATA,
            "number_of_shortest_paths_per_train": 10,
        },
        schedule={"schedule_id": [0, 4, 4], "number_of_shortest_paths_per_train_schedule": 1, "slack": 4.0},
        reschedule={
            "earliest_malfunction": 30, "malfunction_duration": 50, "malfunction_train_id": [0, 86, 86],
            "number_of_shortest_paths_per_train": 10, "max_window_size_from_earliest": 60,
            "weight_route_change": 30, "weight_lateness_seconds": 1,
        },
        time_limit=200.0,
    )


def desk_config() -> AgendaConfig:
    """Scaled-down grid that runs on a laptop in minutes and is deterministic (node budget)."""
    return AgendaConfig(
        agenda_id="desk",
        infra={
            "width": 40, "height": 40, "flatland_seed_value": [190, 190, 1],
            "max_num_cities": [4, 7, 3], "max_rail_between_cities": 1, "max_rail_in_city": 2,
            "number_of_agents": [8, 16, 4], "speed_data": PAPER_SPEED_DATA,
            "number_of_shortest_paths_per_train": 10,
        },
        schedule={"schedule_id": [0, 2, 2], "number_of_shortest_paths_per_train_schedule": 1, "slack": 3.0},
        reschedule={
            "earliest_malfunction": 30, "malfunction_duration": 15, "malfunction_train_id": [0, 16, 4],
            "number_of_shortest_paths_per_train": 10, "max_window_size_from_earliest": 60,
            "weight_route_change": 30, "weight_lateness_seconds": 1,
        },
        time_limit=None,
        node_limit=50_000,
        timing_repeats=3,
    )


@dataclass(frozen=True)
class InfraTask:
    infra_id: int
    params: dict
    seed: int
    paths_per_train: int


@dataclass(frozen=True)
class ExperimentTask:
    infra_id: int
    schedule_id: int
    malfunction_train: int
    run: int

    @property
    def experiment_id(self) -> str:
        return f"i{self.infra_id}_s{self.schedule_id}_m{self.malfunction_train}_r{self.run}"


@dataclass
class Agenda:
    config: AgendaConfig
    infras: list[InfraTask]
    schedules: dict[int, list[int]]
    experiments: list[ExperimentTask]

    def __len__(self) -> int:
        return len(self.experiments)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "infras": [asdict(t) for t in self.infras],
            "schedules": {str(k): v for k, v in self.schedules.items()},
            "experiments": [e.experiment_id for e in self.experiments],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def expand_agenda(config: AgendaConfig) -> Agenda:
    """Cartesian expansion into infrastructures, schedules, malfunctions and runs.

    Duplicate points produced by a range (e.g. ``[1, 2, 2]``) collapse so every
    composite id is unique.
    """
    grid = {k: _values(config.infra[k]) for k in INFRA_KEYS if k in config.infra}
    combos = _unique([dict(zip(grid, vals)) for vals in itertools.product(*grid.values())])
    k_infra = config.infra.get("number_of_shortest_paths_per_train", 10)
    infras = [InfraTask(i, {k: v for k, v in c.items() if k != "flatland_seed_value"},
                        c.get("flatland_seed_value", 0), k_infra) for i, c in enumerate(combos)]
    sched_ids = _unique(_values(config.schedule.get("schedule_id", 0)))
    train_ids = _unique(_values(config.reschedule.get("malfunction_train_id", 0)))
    schedules, experiments = {}, []
    for it in infras:
        schedules[it.infra_id] = sched_ids
        agents = it.params.get("number_of_agents", InfraParams.number_of_agents)
        for s in sched_ids:
            for m in train_ids:
                if m >= agents:
                    continue
                for r in range(config.runs):
                    experiments.append(ExperimentTask(it.infra_id, s, m, r))
    if not experiments:
        raise EmptyAgenda("agenda expands to no experiments")
    return Agenda(config, infras, schedules, experiments)


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

_VERSIONED = {"type": "object", "required": ["version"], "properties": {"version": {"const": 1}}}
SCHEMAS = {
    "infrastructure": {**_VERSIONED, "required": ["version", "infra_id", "width", "height", "cells", "trains"]},
    "schedule": {**_VERSIONED, "required": ["version", "schedule_id", "horizon", "runs"]},
    "malfunction": {
        "type": "object", "required": ["train_id", "time_step", "duration"],
        "properties": {"train_id": {"type": "integer", "minimum": 0}, "time_step": {"type": "integer", "minimum": 0},
                       "duration": {"type": "integer", "minimum": 1}},
    },
    "experiment": {
        **_VERSIONED,
        "required": ["version", "experiment_id", "malfunction", "scopers", "status"],
        "properties": {"version": {"const": RESULT_VERSION},
                       "scopers": {"type": "object", "required": ["online_unrestricted"]}},
    },
}


def store_root(path: str | Path | None = None) -> Path:
    return Path(path or os.environ.get("CORESCOPE_STORE", "store"))


class Store:
    def __init__(self, root: str | Path | None = None):
        self.root = store_root(root)

    def infra_path(self, i: int) -> Path:
        return self.root / "infra" / str(i) / "infrastructure.json"

    def schedule_path(self, i: int, s: int) -> Path:
        return self.root / "infra" / str(i) / "schedule" / str(s) / "schedule.json"

    def failure_path(self, i: int, s: int | None = None) -> Path:
        base = self.root / "infra" / str(i)
        return (base if s is None else base / "schedule" / str(s)) / "failed.json"

    def malfunction_path(self, i: int, s: int, m: int) -> Path:
        return self.root / "infra" / str(i) / "schedule" / str(s) / "resched" / str(m) / "malfunction.json"

    def run_dir(self, agenda_id: str) -> Path:
        return self.root / "runs" / agenda_id

    def experiment_path(self, agenda_id: str, experiment_id: str) -> Path:
        return self.run_dir(agenda_id) / "experiments" / f"{experiment_id}.json"

    @staticmethod
    def write(path: Path, text: str) -> None:
        """Atomic write: readers never see a partial file."""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
        tmp.write_text(text)
        os.replace(tmp, path)

    @staticmethod
    def read(path: Path, schema: str) -> dict:
        data = json.loads(Path(path).read_text())
        jsonschema.validate(data, SCHEMAS[schema])
        return data

    def load_infra(self, i: int) -> Infrastructure:
        return Infrastructure.from_dict(self.read(self.infra_path(i), "infrastructure"))

    def load_schedule(self, i: int, s: int) -> Schedule:
        return Schedule.from_dict(self.read(self.schedule_path(i, s), "schedule"))

    def load_malfunction(self, i: int, s: int, m: int) -> Malfunction:
        return Malfunction.from_dict(self.read(self.malfunction_path(i, s, m), "malfunction"))

    def load_results(self, agenda_id: str) -> list[dict]:
        d = self.run_dir(agenda_id) / "experiments"
        return [self.read(p, "experiment") for p in sorted(d.glob("*.json"))] if d.exists() else []


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def infra_params(params: dict) -> InfraParams:
    known = {k: v for k, v in params.items() if k in InfraParams.__dataclass_fields__}
    return InfraParams.from_dict(known)


def ensure_infra(store: Store, task: InfraTask) -> Infrastructure:
    path = store.infra_path(task.infra_id)
    if path.exists():
        return store.load_infra(task.infra_id)
    infra = generate_infrastructure(infra_params(task.params), task.seed, str(task.infra_id))
    store.write(path, infra.dumps())
    return infra


def schedule_seed(infra_seed: int, schedule_id: int) -> int:
    return infra_seed * 1000 + schedule_id


def ensure_schedule(store: Store, infra: Infrastructure, infra_id: int, schedule_id: int, config: AgendaConfig,
                    infra_seed: int = 0) -> Schedule:
    path = store.schedule_path(infra_id, schedule_id)
    if path.exists():
        return store.load_schedule(infra_id, schedule_id)
    sc = config.schedule
    schedule = generate_schedule(
        infra, seed=schedule_seed(infra_seed, schedule_id),
        k=sc.get("number_of_shortest_paths_per_train_schedule", 1), slack=sc.get("slack", 2.0),
        schedule_id=str(schedule_id),
    )
    store.write(path, schedule.dumps())
    return schedule


def malfunction_of(schedule: Schedule, train_id: int, config: AgendaConfig) -> Malfunction:
    """Malfunction after the configured running time; may fall after arrival (vacuous)."""
    rc = config.reschedule
    run = schedule.runs[train_id]
    return Malfunction(train_id, run.departure + rc.get("earliest_malfunction", 30),
                       rc.get("malfunction_duration", 50))


def ensure_malfunction(store: Store, schedule: Schedule, infra_id: int, schedule_id: int, train_id: int,
                       config: AgendaConfig) -> Malfunction:
    path = store.malfunction_path(infra_id, schedule_id, train_id)
    m = malfunction_of(schedule, train_id, config)
    if path.exists():
        stored = store.load_malfunction(infra_id, schedule_id, train_id)
        if stored == m:
            return stored
    store.write(path, json.dumps(m.to_dict(), sort_keys=True))
    return m


def _generate_infra_level(root: str, task: InfraTask, config_d: dict) -> dict:
    store = Store(root)
    config = AgendaConfig.from_dict(config_d)
    out = {"infra_id": task.infra_id, "schedules": {}, "error": None}
    try:
        infra = ensure_infra(store, task)
    except GenerationFailed as e:
        out["error"] = str(e)
        store.write(store.failure_path(task.infra_id), json.dumps({"reason": f"GenerationFailed: {e}"}))
        return out
    for s in _unique(_values(config.schedule.get("schedule_id", 0))):
        try:
            ensure_schedule(store, infra, task.infra_id, s, config, task.seed)
            out["schedules"][s] = None
        except Unschedulable as e:
            out["schedules"][s] = str(e)
            store.write(store.failure_path(task.infra_id, s), json.dumps({"reason": f"Unschedulable: {e}"}))
    return out


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    data: dict

    @property
    def experiment_id(self) -> str:
        return self.data["experiment_id"]

    @property
    def scopers(self) -> dict:
        return self.data["scopers"]

    def dumps(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1)


def environment() -> dict:
    return {"python": sys.version.split()[0], "platform": platform.platform(), "machine": platform.machine(),
            "processor": platform.processor(), "cpus": os.cpu_count()}


def _timed_solve(problem: ScopedProblem, config: AgendaConfig):
    """Solve, re-running ``timing_repeats`` times and keeping the fastest wall-clock time."""
    sol, stats = solve(problem, budget=config.budget)
    for _ in range(config.timing_repeats - 1):
        _, again = solve(problem, budget=config.budget)
        stats.elapsed = min(stats.elapsed, again.elapsed)
    return sol, stats


def _search_space(problem: ScopedProblem) -> dict:
    space = problem.search_space()
    return {"routes": sum(r for r, _ in space.values()), "window_total": sum(w for _, w in space.values())}


def _run_scoper(kind: str, directive: ScopeDirective, full: ScopedProblem, schedule: Schedule,
                config: AgendaConfig) -> dict:
    entry = {"kind": kind, "status": None, "reason": None, "selected": sorted(directive.selected),
             "directive": directive.to_dict(), "solution": None, "stats": None, "cost": None}
    try:
        problem = apply_scope(full, directive)
        entry["search_space"] = _search_space(problem)
        sol, stats = _timed_solve(problem, config)
    except (Infeasible, InfeasibleFreeze) as e:
        entry["status"], entry["reason"] = "infeasible", str(e)
        return entry
    entry["stats"] = stats.to_dict()
    entry["status"] = stats.status
    if sol.feasible:
        entry["solution"] = sol.to_dict()
        entry["cost"] = cost(sol, schedule, full.weights)
        entry["conflicts"] = len(find_conflicts(sol.runs.values()))
    else:
        entry["reason"] = "budget exhausted without a solution"
    return entry


def _skipped(kind: str, reason: str) -> dict:
    return {"kind": kind, "status": "skipped", "reason": reason, "selected": [], "directive": None,
            "solution": None, "stats": None, "cost": None}


def run_experiment(infra: Infrastructure, schedule: Schedule, malfunction: Malfunction, config: AgendaConfig,
                   experiment_id: str = "adhoc", run: int = 0) -> ExperimentResult:
    """Run every scoper on one malfunction; errors are recorded per scoper, never raised."""
    rc = config.reschedule
    graph = to_graph(infra)
    full = build_full_problem(infra, schedule, malfunction, config.weights,
                              k=rc.get("number_of_shortest_paths_per_train", 10),
                              max_window=rc.get("max_window_size_from_earliest", 60), graph=graph)
    scopers: dict[str, dict] = {}
    un = _run_scoper("online_unrestricted", scope_online_unrestricted(schedule, malfunction), full, schedule,
                     config)
    scopers["online_unrestricted"] = un
    unrestricted = None
    if un["solution"] is not None:
        unrestricted = Solution.from_dict(un["solution"])
    un_proven = un["status"] == "optimal"

    for kind, make in (("upper_bound", lambda S: scope_upper_bound(S, schedule)),
                       ("max_speedup", lambda S: scope_max_speedup(schedule, S)),
                       ("baseline", lambda S: scope_baseline(schedule, S))):
        if unrestricted is None:
            scopers[kind] = _skipped(kind, f"online_unrestricted has no solution ({un['status']})")
            continue
        entry = _run_scoper(kind, make(unrestricted), full, schedule, config)
        if kind in ("max_speedup", "baseline"):
            try:
                restricted = apply_scope(full, make(unrestricted))
                entry["contains_unrestricted"] = all(
                    restricted.trains[t].contains(r) for t, r in unrestricted.runs.items())
            except InfeasibleFreeze:
                entry["contains_unrestricted"] = False
        scopers[kind] = entry

    heuristic = scope_heuristic(schedule, malfunction, infra, route_restricted=config.heuristic_route_restricted)
    scopers["heuristic"] = _run_scoper("heuristic", heuristic, full, schedule, config)

    n = len(heuristic.selected)
    seeds = [_run_scoper("random", scope_random(schedule, malfunction, n, seed), full, schedule, config)
             for seed in range(config.random_seeds)]
    for seed, e in enumerate(seeds):
        e["seed"] = seed
    solved = [e for e in seeds if e["cost"] is not None]
    scopers["random"] = {
        "kind": "random", "status": "aggregate", "selected_size": n, "seeds": seeds,
        "infeasible": sum(e["status"] == "infeasible" for e in seeds),
        "cost": statistics.fmean(e["cost"] for e in solved) if solved else None,
        "stats": {"elapsed": statistics.fmean(e["stats"]["elapsed"] for e in seeds if e["stats"])
                  if any(e["stats"] for e in seeds) else None,
                  "nodes_expanded": statistics.fmean(e["stats"]["nodes_expanded"] for e in seeds if e["stats"])
                  if any(e["stats"] for e in seeds) else None},
    }

    core = core_problem(schedule, unrestricted) if unrestricted is not None else None
    t_full = un["stats"]["elapsed"] if un["stats"] else None
    for kind, entry in scopers.items():
        for e in (entry["seeds"] if kind == "random" else [entry]):
            _annotate(e, un, t_full, un_proven, core, schedule)
        if kind == "random":
            lats = [e["additional_lateness"] for e in entry["seeds"] if e.get("additional_lateness") is not None]
            entry["additional_lateness"] = statistics.fmean(lats) if lats else None
            f1s = [e["prediction"]["f1"] for e in entry["seeds"] if e.get("prediction")]
            entry["prediction"] = ({"f1": statistics.fmean(f1s),
                                    "fp": statistics.fmean(e["prediction"]["fp"] for e in entry["seeds"]),
                                    "fn": statistics.fmean(e["prediction"]["fn"] for e in entry["seeds"])}
                                   if f1s else None)
            if entry["stats"]["elapsed"] is not None and t_full is not None:
                entry["speedup"] = speedup(t_full, entry["stats"]["elapsed"])

    data = {
        "version": RESULT_VERSION,
        "experiment_id": experiment_id,
        "infra_id": infra.infra_id,
        "schedule_id": schedule.schedule_id,
        "run": run,
        "status": "done",
        "malfunction": malfunction.to_dict(),
        "vacuous": malfunction.time_step >= schedule.runs[malfunction.train_id].arrival,
        "n_agents": len(schedule.runs),
        "n_cities": len(infra.cities),
        "params": infra.params.to_dict() if infra.params else None,
        "core": {"trains": sorted(core.trains), "nodes": len(core.nodes)} if core else None,
        "schedule_conflicts": len(find_conflicts(schedule.runs.values())),
        "scopers": scopers,
        "environment": environment(),
    }
    return ExperimentResult(data)


def _annotate(e: dict, un: dict, t_full, un_proven: bool, core, schedule: Schedule) -> None:
    if e["stats"] and t_full is not None:
        e["speedup"] = speedup(t_full, e["stats"]["elapsed"])
    if e["cost"] is not None and un["cost"] is not None:
        lat = additional_lateness(e["cost"], un["cost"], e["status"] == "optimal", un_proven)
        e["additional_lateness"], e["lateness_unproven"] = lat.value, lat.unproven
    else:
        e["additional_lateness"], e["lateness_unproven"] = None, None
    if core is not None and e["kind"] != "online_unrestricted":
        q = prediction_quality(e["selected"], core.trains, schedule.runs)
        e["prediction"] = {"tp": q.tp, "fp": q.fp, "fn": q.fn, "tn": q.tn, "f1": q.f1, "vacuous": q.vacuous}
    else:
        e["prediction"] = None


def failed_result(task: ExperimentTask, reason: str) -> dict:
    return {"version": RESULT_VERSION, "experiment_id": task.experiment_id, "infra_id": str(task.infra_id),
            "schedule_id": str(task.schedule_id), "run": task.run, "status": "failed", "reason": reason,
            "malfunction": {"train_id": task.malfunction_train},
            "scopers": {"online_unrestricted": _skipped("online_unrestricted", reason)}}


def _experiment_worker(root: str, task: ExperimentTask, config_d: dict) -> tuple[str, str]:
    store = Store(root)
    config = AgendaConfig.from_dict(config_d)
    path = store.experiment_path(config.agenda_id, task.experiment_id)
    try:
        infra = store.load_infra(task.infra_id)
        schedule = store.load_schedule(task.infra_id, task.schedule_id)
        m = ensure_malfunction(store, schedule, task.infra_id, task.schedule_id, task.malfunction_train, config)
        result = run_experiment(infra, schedule, m, config, task.experiment_id, task.run).data
    except FileNotFoundError as e:
        reason = f"missing input: {e.filename}"
        for marker in (store.failure_path(task.infra_id), store.failure_path(task.infra_id, task.schedule_id)):
            if marker.exists():
                reason = json.loads(marker.read_text())["reason"]
        result = failed_result(task, reason)
    except CoreScopeError as e:
        result = failed_result(task, f"{type(e).__name__}: {e}")
    store.write(path, json.dumps(result, sort_keys=True, indent=1))
    return task.experiment_id, result["status"]


def _map(fn, jobs: list[tuple], workers: int):
    """Yield results of ``fn(*job)``; sequential in submission order when ``workers`` is 1."""
    if workers <= 1:
        for job in jobs:
            yield fn(*job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        try:
            for f in as_completed(futures):
                yield f.result()
        except KeyboardInterrupt:
            for f in futures:
                f.cancel()
            raise


def run_agenda(agenda: Agenda, store: Store | str | Path | None = None, workers: int = 1,
               progress=None) -> dict:
    """Generate missing inputs and run every experiment not yet stored.

    Completed experiments are skipped, so an interrupted agenda resumes where it
    stopped. ``progress`` receives one dict per finished unit of work.
    """
    store = store if isinstance(store, Store) else Store(store)
    config = agenda.config
    cd = config.to_dict()
    root = str(store.root)
    store.write(store.run_dir(config.agenda_id) / "agenda.json", agenda.dumps())
    emit = progress or (lambda d: None)

    failed_inputs = {}
    for out in _map(_generate_infra_level, [(root, t, cd) for t in agenda.infras], workers):
        emit({"event": "infra", "infra_id": out["infra_id"], "error": out["error"]})
        if out["error"]:
            failed_inputs[out["infra_id"]] = out["error"]

    todo = [t for t in agenda.experiments if not store.experiment_path(config.agenda_id, t.experiment_id).exists()]
    done = len(agenda.experiments) - len(todo)
    emit({"event": "resume", "total": len(agenda.experiments), "already_done": done})
    statuses: dict[str, int] = {}
    for i, (eid, status) in enumerate(_map(_experiment_worker, [(root, t, cd) for t in todo], workers)):
        statuses[status] = statuses.get(status, 0) + 1
        emit({"event": "experiment", "experiment_id": eid, "status": status, "done": done + i + 1,
              "total": len(agenda.experiments)})
    write_metrics_csv(store, config.agenda_id)
    return {"total": len(agenda.experiments), "skipped_existing": done, "ran": len(todo), "statuses": statuses,
            "failed_infras": failed_inputs}


# ---------------------------------------------------------------------------
# Metrics table and analysis
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("experiment_id", "infra_id", "schedule_id", "malfunction_train", "run", "n_agents", "n_cities",
                  "vacuous", "scoper", "status", "elapsed", "nodes_expanded", "optimal", "cost",
                  "additional_lateness", "lateness_unproven", "speedup", "tp", "fp", "fn", "f1",
                  "prediction_vacuous", "n_selected", "n_core")


def metric_rows(result: dict) -> list[dict]:
    rows = []
    base = {"experiment_id": result["experiment_id"], "infra_id": result["infra_id"],
            "schedule_id": result["schedule_id"], "malfunction_train": result["malfunction"]["train_id"],
            "run": result["run"], "n_agents": result.get("n_agents"), "n_cities": result.get("n_cities"),
            "vacuous": result.get("vacuous"),
            "n_core": len(result["core"]["trains"]) if result.get("core") else None}
    for kind in SCOPER_ORDER:
        entry = result["scopers"].get(kind)
        if entry is None:
            continue
        entries = [(kind, entry)]
        if kind == "random":
            entries += [(f"random_{e['seed']}", e) for e in entry["seeds"]]
        for name, e in entries:
            stats = e.get("stats") or {}
            pred = e.get("prediction") or {}
            rows.append({**base, "scoper": name, "status": e["status"], "elapsed": stats.get("elapsed"),
                         "nodes_expanded": stats.get("nodes_expanded"), "optimal": stats.get("optimal"),
                         "cost": e.get("cost"), "additional_lateness": e.get("additional_lateness"),
                         "lateness_unproven": e.get("lateness_unproven"), "speedup": e.get("speedup"),
                         "tp": pred.get("tp"), "fp": pred.get("fp"), "fn": pred.get("fn"), "f1": pred.get("f1"),
                         "prediction_vacuous": pred.get("vacuous"),
                         "n_selected": len(e["selected"]) if "selected" in e else e.get("selected_size")})
    return rows


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


def write_metrics_csv(store: Store, agenda_id: str) -> Path:
    rows = [r for res in store.load_results(agenda_id) for r in metric_rows(res)]
    path = store.run_dir(agenda_id) / "metrics.csv"
    store.write(path, _csv_text(METRIC_COLUMNS, rows))
    return path


def strip_timing(obj):
    """Copy of a result with wall-clock dependent fields removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def bin_edges(lo: float, hi: float, bins: int) -> list[float]:
    if hi <= lo or bins == 1:
        return [lo, hi]
    return [lo + (hi - lo) * i / bins for i in range(bins + 1)]


def bin_index(x: float, edges: list[float]) -> int:
    n = len(edges) - 1
    lo, hi = edges[0], edges[-1]
    if hi <= lo:
        return 0
    return min(n - 1, max(0, int(math.floor((x - lo) / (hi - lo) * n))))


@dataclass
class AnalysisReport:
    n_results: int
    n_used: int
    edges: list[float]
    bin_counts: list[int]
    files: list[str]
    summary: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _median(xs):
    xs = [x for x in xs if x is not None]
    return statistics.median(xs) if xs else None


def analyze(results: list[dict], out_dir: str | Path, bins: int = 10, min_time: float | None = None,
            max_time: float | None = None, plots: bool = True) -> AnalysisReport:
    """Bin experiments by unrestricted solve time and summarize every scoper per bin.

    Reads the given results only; writes CSV (and SVG when ``plots``) to ``out_dir``.
    """
    out = Path(out_dir)
    usable = [r for r in results if r.get("status") == "done"
              and (r["scopers"]["online_unrestricted"].get("stats") or {}).get("elapsed") is not None]

    def t_un(r):
        return r["scopers"]["online_unrestricted"]["stats"]["elapsed"]

    used = [r for r in usable if (min_time is None or t_un(r) >= min_time)
            and (max_time is None or t_un(r) <= max_time)]
    if not used:
        warnings.warn("no results left after the time filter", EmptyAfterFilter)
        return AnalysisReport(len(results), 0, [], [], [], {})
    times = [t_un(r) for r in used]
    lo = min_time if min_time is not None else min(times)
    hi = max_time if max_time is not None else max(times)
    edges = bin_edges(lo, hi, bins)
    nb = len(edges) - 1
    binned = [(bin_index(t_un(r), edges), r) for r in sorted(used, key=lambda r: r["experiment_id"])]
    counts = [sum(1 for b, _ in binned if b == i) for i in range(nb)]

    scopers = [k for k in SCOPER_ORDER if k != "online_unrestricted"]
    speed_rows, late_rows, node_rows = [], [], []
    for b, r in binned:
        sc = r["scopers"]
        speed_rows.append({"experiment_id": r["experiment_id"], "bin": b, "t_unrestricted": t_un(r),
                           **{k: sc[k].get("speedup") for k in scopers}})
        late_rows.append({"experiment_id": r["experiment_id"], "bin": b,
                          **{k: sc[k].get("additional_lateness") for k in scopers},
                          "random_infeasible": sc["random"].get("infeasible")})
        node_rows.append({"experiment_id": r["experiment_id"], "bin": b,
                          **{k: (sc[k].get("stats") or {}).get("nodes_expanded") for k in SCOPER_ORDER}})
    files = []
    out.mkdir(parents=True, exist_ok=True)

    def emit(name: str, text: str):
        Store.write(out / name, text)
        files.append(name)

    emit("speedup.csv", _csv_text(["experiment_id", "bin", "t_unrestricted", *scopers], speed_rows))
    emit("additional_lateness.csv", _csv_text(["experiment_id", "bin", *scopers, "random_infeasible"], late_rows))
    emit("nodes.csv", _csv_text(["experiment_id", "bin", *SCOPER_ORDER], node_rows))
    emit("difficulty.csv", _csv_text(["bin", "lo", "hi", "count"],
                                     [{"bin": i, "lo": edges[i], "hi": edges[i + 1], "count": counts[i]}
                                      for i in range(nb)]))
    per_bin = []
    for i in range(nb):
        rows = [x for b, x in zip((b for b, _ in binned), speed_rows) if b == i]
        per_bin.append({"bin": i, "count": counts[i],
                        **{f"median_speedup_{k}": _median([x[k] for x in rows]) for k in scopers}})
    emit("speedup_by_bin.csv", _csv_text(["bin", "count", *[f"median_speedup_{k}" for k in scopers]], per_bin))

    pred_rows = []
    for k in ("heuristic", "random"):
        preds = [r["scopers"][k].get("prediction") for r in used]
        preds = [p for p in preds if p]
        if not preds:
            continue
        pred_rows.append({"scoper": k, "instances": len(preds),
                          "mean_fp": statistics.fmean(p["fp"] for p in preds),
                          "mean_fn": statistics.fmean(p["fn"] for p in preds),
                          "fn_rate": statistics.fmean(p["fn"] > 0 for p in preds),
                          "mean_f1": statistics.fmean(p["f1"] for p in preds)})
    emit("prediction.csv", _csv_text(["scoper", "instances", "mean_fp", "mean_fn", "fn_rate", "mean_f1"], pred_rows))

    summary = {
        "median_nodes": {k: _median([x[k] for x in node_rows]) for k in SCOPER_ORDER},
        "mean_additional_lateness": {
            k: (statistics.fmean(v) if (v := [x[k] for x in late_rows if x[k] is not None]) else None)
            for k in scopers},
        "prediction": {p["scoper"]: p for p in pred_rows},
        "bins": per_bin,
    }
    emit("summary.json", json.dumps(summary, sort_keys=True, indent=1))
    if plots:
        files += _plot(out, binned, speed_rows, late_rows, counts, edges, pred_rows, scopers)
    return AnalysisReport(len(results), len(used), edges, counts, files, summary)


def _plot(out: Path, binned, speed_rows, late_rows, counts, edges, pred_rows, scopers) -> list[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "corescope"
    meta = {"Date": None}
    files = []
    nb = len(counts)

    def boxes(rows, name, ylabel, log):
        fig, ax = plt.subplots(figsize=(max(6, nb * len(scopers) * 0.3), 4))
        width = 0.8 / len(scopers)
        for j, k in enumerate(scopers):
            data = [[x[k] for x in rows if x["bin"] == i and x[k] is not None] for i in range(nb)]
            pos = [i + (j - len(scopers) / 2) * width + width / 2 for i in range(nb)]
            keep = [(p, d) for p, d in zip(pos, data) if d]
            if keep:
                bp = ax.boxplot([d for _, d in keep], positions=[p for p, _ in keep], widths=width * 0.9,
                                patch_artist=True, manage_ticks=False)
                for patch in bp["boxes"]:
                    patch.set_facecolor(f"C{j}")
            ax.plot([], [], color=f"C{j}", label=k, linewidth=6)
        ax.set_xticks(range(nb))
        ax.set_xticklabels([f"{edges[i]:.3g}-{edges[i + 1]:.3g}" for i in range(nb)], rotation=45, ha="right")
        ax.set_xlabel("unrestricted solve time bin [s]")
        ax.set_ylabel(ylabel)
        if log:
            ax.set_yscale("log")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out / name, metadata=meta)
        plt.close(fig)
        files.append(name)

    boxes(speed_rows, "speedup.svg", "speed-up", True)
    boxes(late_rows, "additional_lateness.svg", "additional lateness", False)

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(range(nb), counts)
    ax.set_xlabel("unrestricted solve time bin")
    ax.set_ylabel("experiments")
    fig.tight_layout()
    fig.savefig(out / "difficulty.svg", metadata=meta)
    plt.close(fig)
    files.append("difficulty.svg")

    if pred_rows:
        fig, ax = plt.subplots(figsize=(6, 3))
        labels = [p["scoper"] for p in pred_rows]
        for j, key in enumerate(("mean_fp", "mean_fn", "mean_f1")):
            ax.bar([i + j * 0.25 for i in range(len(labels))], [p[key] for p in pred_rows], width=0.25, label=key)
        ax.set_xticks([i + 0.25 for i in range(len(labels))])
        ax.set_xticklabels(labels)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out / "prediction.svg", metadata=meta)
        plt.close(fig)
        files.append("prediction.svg")
    return files
