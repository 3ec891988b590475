"""Noisy test accuracy of circuits searched with and without the noisy estimator."""

import argparse
import statistics

from qnas.evo import write_history
from qnas.experiments import noise_adaptive_gain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="noise_adaptive.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = noise_adaptive_gain(seed)
        rows.append(r)
        print(f"seed {seed}: aware {r['aware_noisy']:.3f}  unaware {r['unaware_noisy']:.3f}")
    med = statistics.median(r["aware_noisy"] - r["unaware_noisy"] for r in rows)
    print(f"median gain {med:+.3f}")
    write_history(args.out, rows)


if __name__ == "__main__":
    main()
