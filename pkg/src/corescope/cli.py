"""Command-line entry point. Every subcommand prints one JSON object per progress line."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from corescope.errors import CoreScopeError, GenerationFailed, InapplicableMalfunction, Unschedulable
from corescope.gridgen import DEFAULT_SPEED_DATA, InfraParams, Infrastructure, generate_infrastructure, render_svg, \
    to_graph
from corescope.pipeline import (AgendaConfig, Store, analyze, desk_config, expand_agenda, malfunction_of,
                                paper_config, run_agenda, run_experiment, write_metrics_csv)
from corescope.resched import Malfunction, draw_malfunction
from corescope.scheduling import Schedule, find_conflicts, generate_schedule, run_violations


def emit(**fields) -> None:
    print(json.dumps(fields, sort_keys=True), flush=True)


def _config(args) -> AgendaConfig:
    if getattr(args, "config", None):
        return AgendaConfig.load(args.config)
    return paper_config() if getattr(args, "preset", "desk") == "paper" else desk_config()


def cmd_gen_infra(args) -> int:
    params = InfraParams(width=args.width, height=args.height, max_num_cities=args.max_num_cities,
                         max_rail_between_cities=args.max_rail_between_cities,
                         max_rail_in_city=args.max_rail_in_city, number_of_agents=args.number_of_agents,
                         speed_data=dict(DEFAULT_SPEED_DATA))
    store = Store(args.store)
    infra = generate_infrastructure(params, args.seed, str(args.infra_id))
    path = store.infra_path(args.infra_id)
    store.write(path, infra.dumps())
    emit(event="gen-infra", infra_id=args.infra_id, path=str(path), cities=len(infra.cities),
         trains=len(infra.trains), cells=len(infra.cells))
    return 0


def cmd_gen_schedule(args) -> int:
    store = Store(args.store)
    infra = store.load_infra(args.infra_id)
    schedule = generate_schedule(infra, seed=args.seed, k=args.number_of_shortest_paths_per_train_schedule,
                                 slack=args.slack, schedule_id=str(args.schedule_id))
    path = store.schedule_path(args.infra_id, args.schedule_id)
    store.write(path, schedule.dumps())
    emit(event="gen-schedule", infra_id=args.infra_id, schedule_id=args.schedule_id, path=str(path),
         horizon=schedule.horizon, total_run_time=schedule.total_run_time)
    return 0


def cmd_gen_malfunction(args) -> int:
    store = Store(args.store)
    schedule = store.load_schedule(args.infra_id, args.schedule_id)
    if args.malfunction_train_id is None:
        m = draw_malfunction(schedule, args.earliest_malfunction, args.malfunction_duration, args.seed)
    else:
        if args.malfunction_train_id not in schedule.runs:
            raise InapplicableMalfunction(f"no train {args.malfunction_train_id} in the schedule")
        run = schedule.runs[args.malfunction_train_id]
        m = Malfunction(args.malfunction_train_id, run.departure + args.earliest_malfunction,
                        args.malfunction_duration)
    path = store.malfunction_path(args.infra_id, args.schedule_id, m.train_id)
    store.write(path, json.dumps(m.to_dict(), sort_keys=True))
    emit(event="gen-malfunction", path=str(path), **m.to_dict())
    return 0


def cmd_run_experiment(args) -> int:
    store = Store(args.store)
    config = _config(args)
    infra = store.load_infra(args.infra_id)
    schedule = store.load_schedule(args.infra_id, args.schedule_id)
    mpath = store.malfunction_path(args.infra_id, args.schedule_id, args.malfunction_train_id)
    m = (store.load_malfunction(args.infra_id, args.schedule_id, args.malfunction_train_id) if mpath.exists()
         else malfunction_of(schedule, args.malfunction_train_id, config))
    eid = f"i{args.infra_id}_s{args.schedule_id}_m{m.train_id}_r0"
    result = run_experiment(infra, schedule, m, config, eid)
    path = store.experiment_path(config.agenda_id, eid)
    store.write(path, result.dumps())
    write_metrics_csv(store, config.agenda_id)
    for kind, entry in result.scopers.items():
        emit(event="scoper", experiment_id=eid, scoper=kind, status=entry["status"], cost=entry.get("cost"))
    emit(event="run-experiment", experiment_id=eid, path=str(path))
    return 0


def cmd_run_agenda(args) -> int:
    config = _config(args)
    agenda = expand_agenda(config)
    emit(event="agenda", agenda_id=config.agenda_id, experiments=len(agenda), infras=len(agenda.infras))
    summary = run_agenda(agenda, Store(args.store), workers=args.workers, progress=lambda d: emit(**d))
    emit(event="done", **summary)
    return 0


def cmd_analyze(args) -> int:
    store = Store(args.store)
    results = store.load_results(args.agenda_id)
    if not results:
        emit(event="analyze", error=f"no results for agenda {args.agenda_id!r}")
        return 1
    out = Path(args.out) if args.out else store.run_dir(args.agenda_id) / "analysis"
    report = analyze(results, out, bins=args.bins, min_time=args.min_time, max_time=args.max_time,
                     plots=not args.no_plots)
    emit(event="analyze", results=report.n_results, used=report.n_used, bin_counts=report.bin_counts,
         out=str(out), files=report.files)
    return 0


def cmd_render(args) -> int:
    if args.infra:
        infra = Infrastructure.from_dict(json.loads(Path(args.infra).read_text()))
    else:
        infra = Store(args.store).load_infra(args.infra_id)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(infra, cell_px=args.cell_px))
    emit(event="render", out=str(out))
    return 0


def cmd_verify(args) -> int:
    try:
        schedule = Schedule.from_dict(json.loads(Path(args.schedule).read_text()))
    except (ValueError, KeyError, TypeError) as e:
        emit(event="verify", ok=False, error=f"unreadable schedule: {e}")
        return 1
    problems = [f"conflict at {c.resource} between trains {c.train_a} and {c.train_b} over {c.overlap}"
                for c in find_conflicts(schedule.runs.values())]
    if args.infra:
        graph = to_graph(Infrastructure.from_dict(json.loads(Path(args.infra).read_text())))
        for run in schedule.runs.values():
            problems += run_violations(run, graph)
    for p in problems:
        emit(event="violation", detail=p)
    emit(event="verify", ok=not problems, violations=len(problems))
    return 0 if not problems else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corescope", description=__doc__)
    p.add_argument("--store", help="store root (default: $CORESCOPE_STORE or ./store)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-infra", help="generate one infrastructure with its trains")
    g.add_argument("--infra-id", type=int, default=0)
    g.add_argument("--width", type=int, default=40)
    g.add_argument("--height", type=int, default=40)
    g.add_argument("--max-num-cities", type=int, default=4)
    g.add_argument("--max-rail-between-cities", type=int, default=1)
    g.add_argument("--max-rail-in-city", type=int, default=2)
    g.add_argument("--number-of-agents", type=int, default=8)
    g.add_argument("--seed", "--flatland-seed-value", dest="seed", type=int, default=190)
    g.set_defaults(func=cmd_gen_infra)

    g = sub.add_parser("gen-schedule", help="generate a conflict-free schedule for a stored infrastructure")
    g.add_argument("--infra-id", type=int, default=0)
    g.add_argument("--schedule-id", type=int, default=0)
    g.add_argument("--number-of-shortest-paths-per-train-schedule", type=int, default=1)
    g.add_argument("--slack", type=float, default=2.0, help="horizon as a multiple of the longest run")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_schedule)

    g = sub.add_parser("gen-malfunction", help="create a malfunction for a stored schedule")
    g.add_argument("--infra-id", type=int, default=0)
    g.add_argument("--schedule-id", type=int, default=0)
    g.add_argument("--malfunction-train-id", type=int, help="train to halt; drawn with --seed when omitted")
    g.add_argument("--earliest-malfunction", type=int, default=30)
    g.add_argument("--malfunction-duration", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_malfunction)

    g = sub.add_parser("run-experiment", help="run all scopers on one stored malfunction")
    g.add_argument("--infra-id", type=int, default=0)
    g.add_argument("--schedule-id", type=int, default=0)
    g.add_argument("--malfunction-train-id", type=int, default=0)
    g.add_argument("--config", help="agenda config JSON (solver budget, weights, windows)")
    g.add_argument("--preset", choices=("desk", "paper"), default="desk")
    g.set_defaults(func=cmd_run_experiment)

    g = sub.add_parser("run-agenda", help="expand an agenda and run every experiment (resumable)")
    g.add_argument("--config", help="agenda config JSON")
    g.add_argument("--preset", choices=("desk", "paper"), default="desk")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_run_agenda)

    g = sub.add_parser("analyze", help="bin stored results and write CSV and SVG summaries")
    g.add_argument("--agenda-id", default="desk")
    g.add_argument("--bins", type=int, default=10)
    g.add_argument("--min-time", type=float, help="lower bound on unrestricted solve time [s]")
    g.add_argument("--max-time", type=float, help="upper bound on unrestricted solve time [s]")
    g.add_argument("--out", help="output directory (default: runs/<agenda>/analysis)")
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_analyze)

    g = sub.add_parser("render", help="draw an infrastructure as SVG")
    g.add_argument("--infra-id", type=int, default=0)
    g.add_argument("--infra", help="infrastructure JSON path (overrides --infra-id)")
    g.add_argument("--cell-px", type=int, default=10)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_render)

    g = sub.add_parser("verify", help="check a schedule for resource conflicts and illegal moves")
    g.add_argument("--schedule", required=True)
    g.add_argument("--infra", help="infrastructure JSON for move legality checks")
    g.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except (GenerationFailed, Unschedulable, InapplicableMalfunction, CoreScopeError) as e:
        emit(event="error", command=args.command, error=f"{type(e).__name__}: {e}")
        return 1
    except (FileNotFoundError, ValueError) as e:
        emit(event="error", command=args.command, error=f"{type(e).__name__}: {e}")
        return 2 if isinstance(e, ValueError) and not isinstance(e, json.JSONDecodeError) else 1
    except KeyboardInterrupt:
        emit(event="interrupted", command=args.command)
        return 130


if __name__ == "__main__":
    sys.exit(main())
