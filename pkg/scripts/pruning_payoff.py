"""Prune the searched QML circuit and compare gate counts and accuracy with the unpruned one."""

import argparse

from qnas.evo import write_history
from qnas.experiments import pruning_payoff


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="pruning_payoff.csv")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = pruning_payoff(seed)
        rows.append({k: v for k, v in r.items() if k != "sweep"})
        print(f"seed {seed}: ratio {r['ratio']}  gates {r['gates_before']} -> {r['gates_after']}  "
              f"clean {r['clean_acc_before']:.3f} -> {r['clean_acc_after']:.3f}  "
              f"noisy loss {r['noisy_loss_before']:.4f} -> {r['noisy_loss_after']:.4f}")
    write_history(args.out, rows)


if __name__ == "__main__":
    main()
