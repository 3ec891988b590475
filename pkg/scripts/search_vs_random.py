"""Evolutionary vs budget-matched random search on the noisy T device."""

import argparse

from qnas.evo import write_history
from qnas.experiments import search_vs_random


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="search_vs_random.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = search_vs_random(seed)
        rows.append({k: r[k] for k in ("seed", "evo_best", "random_best", "evaluations", "evo_gene", "random_gene")})
        print(f"seed {seed}: evolution {r['evo_best']:.4f}  random {r['random_best']:.4f}")
    write_history(args.out, rows)


if __name__ == "__main__":
    main()
