"""Run the laptop-scale agenda end to end and print the analysis summary.

    python3 scripts/run_desk_agenda.py --store store --workers 1
"""
import argparse
import json

from corescope.pipeline import Store, analyze, desk_config, expand_agenda, run_agenda


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--store", default="store")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--bins", type=int, default=10)
    args = ap.parse_args()

    config = desk_config()
    agenda = expand_agenda(config)
    store = Store(args.store)
    summary = run_agenda(agenda, store, workers=args.workers,
                         progress=lambda d: print(json.dumps(d, sort_keys=True), flush=True))
    print(json.dumps(summary, sort_keys=True))
    report = analyze(store.load_results(config.agenda_id), store.run_dir(config.agenda_id) / "analysis",
                     bins=args.bins)
    print(json.dumps(report.summary, sort_keys=True, indent=1))


if __name__ == "__main__":
    main()
