"""Spearman correlation of inherited vs from-scratch SubCircuit loss, one row per seed."""

import argparse
import statistics

from qnas.evo import write_history
from qnas.experiments import ranking_fidelity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--n-specs", type=int, default=20)
    ap.add_argument("--out", default="ranking_fidelity.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = ranking_fidelity(seed, n_specs=args.n_specs)
        rows.append({"seed": seed, "spearman": r["spearman"]})
        print(f"seed {seed}: spearman {r['spearman']:.3f}")
    print(f"median spearman {statistics.median(r['spearman'] for r in rows):.3f}")
    write_history(args.out, rows)


if __name__ == "__main__":
    main()
