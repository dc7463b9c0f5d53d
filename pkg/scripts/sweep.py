#!/usr/bin/env python3
"""Sweep one architecture hyperparameter on a node dataset and tabulate
accuracy per value (seed-averaged). Reproduces the hop-count / teleport /
depth sensitivity curves at whatever scale the config sets.

Examples:
  python scripts/sweep.py --data data/cora --config configs/cora_desk.json \
      --param hops --values 1,2,3,6,10 --seeds 0,1,2 --out out/hops_sweep.csv
  python scripts/sweep.py --data data/cora --config configs/cora_desk.json \
      --param alpha --values 0.05,0.1,0.25,0.5 --out out/alpha_sweep.csv
  python scripts/sweep.py --data data/cora --config configs/cora_desk.json \
      --param blocks --values 3,6,12,18,24 --out out/depth_sweep.csv
"""

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from magna.cli import load_run_config  # noqa: E402
from magna.graph import load_node_dataset  # noqa: E402
from magna.model import NetworkConfig  # noqa: E402
from magna.train import train_node_classifier  # noqa: E402


def parse_value(param: str, text: str):
    field_type = NetworkConfig.__dataclass_fields__[param].type
    return float(text) if "float" in str(field_type) else int(text)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True)
    parser.add_argument("--config", default=None)
    parser.add_argument("--param", required=True,
                        choices=["hops", "alpha", "blocks", "heads", "dim"])
    parser.add_argument("--values", required=True, help="comma-separated values")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--out", required=True, help="output CSV path")
    args = parser.parse_args()

    net_cfg, train_cfg = load_run_config(args.config)
    dataset = load_node_dataset(args.data)
    values = [parse_value(args.param, v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# param={args.param} seeds={args.seeds}\n")
        writer = csv.writer(fh)
        writer.writerow([args.param, "mean_val", "mean_test", "std_test", "mean_epochs"])
        for value in values:
            cfg = dataclasses.replace(net_cfg, **{args.param: value})
            vals, tests, epochs = [], [], []
            for seed in seeds:
                report, _ = train_node_classifier(
                    dataset, cfg, dataclasses.replace(train_cfg, seed=seed)
                )
                vals.append(report.best_val)
                tests.append(report.test_metric)
                epochs.append(len(report.train_loss))
            writer.writerow([value, np.mean(vals), np.mean(tests), np.std(tests), np.mean(epochs)])
            fh.flush()
            print(f"{args.param}={value}: val={np.mean(vals):.4f} test={np.mean(tests):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
