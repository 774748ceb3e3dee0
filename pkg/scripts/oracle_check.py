"""Compare the branch-and-bound solver against exhaustive enumeration.

    python3 scripts/oracle_check.py --seeds 300
"""
import argparse
import random
import sys
import time
from pathlib import Path

from corescope.errors import Infeasible, TooLarge
from corescope.solver import brute_force_oracle, solve

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from instances import lattice_problem, tiny_problem  # noqa: E402


def outcome(problem, cap):
    try:
        return brute_force_oracle(problem, cap=cap).objective
    except Infeasible:
        return "infeasible"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=300)
    ap.add_argument("--cap", type=int, default=10**6)
    args = ap.parse_args()
    rng = random.Random(0)
    counts = {"agree": 0, "disagree": 0, "too_large": 0, "none": 0}
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        for make in (lambda: tiny_problem(seed, max_window=rng.randint(1, 5)),
                     lambda: lattice_problem(seed, rng.randint(1, 3), 10, rng.randint(0, 5), rng.randint(1, 3))):
            p = make()
            if p is None:
                counts["none"] += 1
                continue
            try:
                expected = outcome(p, args.cap)
            except TooLarge:
                counts["too_large"] += 1
                continue
            try:
                got = solve(p)[0].objective
            except Infeasible:
                got = "infeasible"
            if got == expected:
                counts["agree"] += 1
            else:
                counts["disagree"] += 1
                print(f"seed {seed}: solver {got} vs oracle {expected}")
    print(counts, f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
