#!/usr/bin/env python3
"""Download the Planetoid Cora citation benchmark and write the TSV dataset
directory this package loads (features/edges/labels/splits).

Features are row-normalized (the standard preprocessing for citation
benchmarks); edges are written once per undirected pair, deduplicated:
the raw citation list contains reciprocal pairs, which a loader that
rejects duplicate directed edges cannot accept twice. Splits are the
standard 140 train / 500 val / 1000 test.

Usage: python scripts/fetch_cora.py [--out data/cora]
"""

import argparse
import os
import pickle
import sys
import urllib.request

import numpy as np

BASE_URLS = [
    "https://raw.githubusercontent.com/kimiyoung/planetoid/master/data/",
    "https://github.com/kimiyoung/planetoid/raw/master/data/",
]
PARTS = ["x", "y", "tx", "ty", "allx", "ally", "graph", "test.index"]


def fetch(name: str, cache_dir: str) -> str:
    path = os.path.join(cache_dir, name)
    if os.path.exists(path):
        return path
    last_err = None
    for base in BASE_URLS:
        try:
            print(f"downloading {base}{name}")
            urllib.request.urlretrieve(base + name, path)
            return path
        except OSError as err:
            last_err = err
    raise SystemExit(f"could not download {name}: {last_err}")


def load_pickle(path: str):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join("data", "cora"))
    args = parser.parse_args()
    cache = os.path.join(args.out, "_raw")
    os.makedirs(cache, exist_ok=True)

    raw = {p: fetch(f"ind.cora.{p}", cache) for p in PARTS}
    y = load_pickle(raw["y"])
    tx = load_pickle(raw["tx"])
    ty = load_pickle(raw["ty"])
    allx = load_pickle(raw["allx"])
    ally = load_pickle(raw["ally"])
    graph = load_pickle(raw["graph"])
    with open(raw["test.index"]) as fh:
        test_idx = np.array([int(line.strip()) for line in fh if line.strip()])

    import scipy.sparse as sp

    features = sp.vstack((allx, tx)).tolil()
    test_sorted = np.sort(test_idx)
    features[test_idx, :] = features[test_sorted, :]
    features = np.asarray(features.todense(), dtype=np.float64)
    row_sums = features.sum(axis=1, keepdims=True)
    row_sums[row_sums == 0] = 1.0
    features = features / row_sums

    labels_onehot = np.vstack((ally, ty))
    labels_onehot[test_idx, :] = labels_onehot[test_sorted, :]
    labels = labels_onehot.argmax(axis=1)

    n = features.shape[0]
    pairs = set()
    for u, neighbors in graph.items():
        for v in neighbors:
            if u != v:
                pairs.add((min(u, v), max(u, v)))

    train_idx = list(range(y.shape[0]))
    val_idx = list(range(y.shape[0], y.shape[0] + 500))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "features.tsv"), "w") as fh:
        for i in range(n):
            fh.write(f"{i}\t{','.join(repr(float(v)) for v in features[i])}\n")
    with open(os.path.join(args.out, "edges.tsv"), "w") as fh:
        for u, v in sorted(pairs):
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(args.out, "labels.tsv"), "w") as fh:
        for i in range(n):
            fh.write(f"{i}\t{int(labels[i])}\n")
    with open(os.path.join(args.out, "splits.tsv"), "w") as fh:
        for i in train_idx:
            fh.write(f"{i}\ttrain\n")
        for i in val_idx:
            fh.write(f"{i}\tval\n")
        for i in sorted(test_idx):
            fh.write(f"{i}\ttest\n")

    print(f"wrote {args.out}: {n} nodes, {len(pairs)} undirected edges, "
          f"{len(train_idx)}/{len(val_idx)}/{len(test_idx)} splits")
    return 0


if __name__ == "__main__":
    sys.exit(main())
