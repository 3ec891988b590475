"""H2 ground-state energy: searched ansatz vs the full-depth U3+CU3 baseline."""

import argparse

from qnas.evo import write_history
from qnas.experiments import vqe_h2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="vqe_h2.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = vqe_h2(seed)
        rows.append({k: v for k, v in r.items()})
        print(f"seed {seed}: exact {r['exact']:.5f}  searched clean {r['searched_clean']:.5f} "
              f"noisy {r['searched_noisy']:.5f}  baseline noisy {r['baseline_noisy']:.5f}")
    write_history(args.out, rows)


if __name__ == "__main__":
    main()
