"""Circuit-run counts of naive per-candidate training vs one shared SuperCircuit."""

import argparse

from qnas.cli import cmd_cost_report, load_config
from qnas.evo import write_history


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--devices", type=int, nargs="+", default=[1, 5, 10])
    ap.add_argument("--out", default="cost_report.csv")
    args = ap.parse_args()
    cfg = load_config(args.config)
    write_history(args.out, [cmd_cost_report(cfg, d) for d in args.devices])


if __name__ == "__main__":
    main()
