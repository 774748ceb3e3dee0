"""Run a deterministic sample of full-scale (100x100, 50-98 trains) experiments.

The full 3264-experiment agenda takes days on one core; this picks every
``--stride``-th experiment and reports per-scoper node counts and speed-ups.

    python3 scripts/paper_sample.py --count 4 --time-limit 60
"""
import argparse
import json
import statistics

from corescope.errors import CoreScopeError
from corescope.pipeline import Store, ensure_infra, ensure_malfunction, ensure_schedule, expand_agenda, \
    paper_config, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--store", default="store-paper")
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--stride", type=int, default=97)
    ap.add_argument("--time-limit", type=float, default=200.0)
    ap.add_argument("--random-seeds", type=int, default=1)
    args = ap.parse_args()

    config = paper_config()
    config.time_limit = args.time_limit
    config.random_seeds = args.random_seeds
    agenda = expand_agenda(config)
    infras = {t.infra_id: t for t in agenda.infras}
    store = Store(args.store)
    speedups: dict[str, list[float]] = {}
    for task in agenda.experiments[:: args.stride][: args.count]:
        try:
            infra = ensure_infra(store, infras[task.infra_id])
            schedule = ensure_schedule(store, infra, task.infra_id, task.schedule_id, config,
                                       infras[task.infra_id].seed)
            m = ensure_malfunction(store, schedule, task.infra_id, task.schedule_id, task.malfunction_train, config)
        except CoreScopeError as e:
            print(json.dumps({"experiment_id": task.experiment_id, "error": str(e)}), flush=True)
            continue
        result = run_experiment(infra, schedule, m, config, task.experiment_id)
        store.write(store.experiment_path(config.agenda_id, task.experiment_id), result.dumps())
        row = {"experiment_id": task.experiment_id, "core": result.data["core"]}
        for kind, e in result.scopers.items():
            row[kind] = {"status": e["status"], "nodes": (e.get("stats") or {}).get("nodes_expanded"),
                         "speedup": e.get("speedup")}
            if e.get("speedup") is not None and result.scopers["online_unrestricted"]["status"] == "optimal":
                speedups.setdefault(kind, []).append(e["speedup"])
        print(json.dumps(row, sort_keys=True), flush=True)
    print(json.dumps({k: statistics.median(v) for k, v in speedups.items()}, sort_keys=True))


if __name__ == "__main__":
    main()
