"""Random hyperparameter search over Fixed / Range / Choice spaces.

A space is a JSON object mapping parameter names to one of:
  {"kind": "fixed",  "value": v}
  {"kind": "range",  "low": a, "high": b, "scale": "linear" | "log"}
  {"kind": "choice", "values": [...]}
Names must be NetworkConfig or TrainConfig fields. Every trial's config is
sampled up front from the run seed and all trials train with the same base
seed, so an all-Fixed space yields identical trials and the ranked table is
reproducible and independent of execution order; ``jobs`` only parallelizes
the training runs.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .model import NetworkConfig
from .train import TrainConfig, train_kg, train_node_classifier

__all__ = ["validate_space", "sample_space", "random_search"]

_KINDS = ("fixed", "range", "choice")
_NET_FIELDS = set(NetworkConfig.__dataclass_fields__)
_TRAIN_FIELDS = set(TrainConfig.__dataclass_fields__) - {"seed"}


def validate_space(space: dict) -> None:
    for name, spec in space.items():
        if name not in _NET_FIELDS and name not in _TRAIN_FIELDS:
            raise ValueError(f"unknown search parameter {name!r}")
        if not isinstance(spec, dict) or spec.get("kind") not in _KINDS:
            raise ValueError(f"{name}: kind must be one of {_KINDS}")
        kind = spec["kind"]
        allowed = {
            "fixed": {"kind", "value"},
            "range": {"kind", "low", "high", "scale"},
            "choice": {"kind", "values"},
        }[kind]
        extra = set(spec) - allowed
        if extra:
            raise ValueError(f"{name}: unexpected keys {sorted(extra)}")
        if kind == "fixed" and "value" not in spec:
            raise ValueError(f"{name}: fixed entry needs a value")
        if kind == "range":
            low, high = spec.get("low"), spec.get("high")
            if low is None or high is None or not low < high:
                raise ValueError(f"{name}: range needs low < high")
            if spec.get("scale", "linear") not in ("linear", "log"):
                raise ValueError(f"{name}: scale must be linear or log")
            if spec.get("scale", "linear") == "log" and low <= 0:
                raise ValueError(f"{name}: log range needs positive bounds")
        if kind == "choice" and not spec.get("values"):
            raise ValueError(f"{name}: choice needs a nonempty values list")


def sample_space(space: dict, rng: np.random.Generator) -> dict:
    out = {}
    for name in sorted(space):
        spec = space[name]
        kind = spec["kind"]
        if kind == "fixed":
            out[name] = spec["value"]
        elif kind == "range":
            low, high = float(spec["low"]), float(spec["high"])
            if spec.get("scale", "linear") == "log":
                out[name] = math.exp(rng.uniform(math.log(low), math.log(high)))
            else:
                out[name] = rng.uniform(low, high)
        else:
            values = spec["values"]
            out[name] = values[int(rng.integers(len(values)))]
    return out


def _apply(sampled: dict, net_cfg: NetworkConfig, train_cfg: TrainConfig):
    net_over = {k: v for k, v in sampled.items() if k in _NET_FIELDS}
    train_over = {k: v for k, v in sampled.items() if k in _TRAIN_FIELDS}
    return replace(net_cfg, **net_over), replace(train_cfg, **train_over)


def _run_trial(args):
    task, dataset, net_cfg, train_cfg, index, sampled = args
    trainer = train_node_classifier if task == "node" else train_kg
    report, _ = trainer(dataset, net_cfg, train_cfg)
    return {
        "trial": index,
        "params": sampled,
        "seed": train_cfg.seed,
        "best_epoch": report.best_epoch,
        "val_metric": report.best_val,
        "test_metric": report.test_metric,
        "epochs_run": len(report.train_loss),
    }


def random_search(task: str, dataset, base_net: NetworkConfig, base_train: TrainConfig,
                  space: dict, trials: int, seed: int, jobs: int = 1) -> list[dict]:
    """Run independent trials and return rows sorted by validation metric
    (descending; trial index breaks ties)."""
    if task not in ("node", "kg"):
        raise ValueError(f"task must be node or kg, got {task!r}")
    if trials < 1:
        raise ValueError("need at least one trial")
    validate_space(space)

    sample_rng = np.random.default_rng(np.random.SeedSequence(seed))
    jobs_args = []
    for i in range(trials):
        sampled = sample_space(space, sample_rng)
        net_cfg, train_cfg = _apply(sampled, base_net, base_train)
        train_cfg = replace(train_cfg, seed=seed)
        jobs_args.append((task, dataset, net_cfg, train_cfg, i, sampled))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_trial, jobs_args))
    else:
        rows = [_run_trial(a) for a in jobs_args]
    rows.sort(key=lambda r: (-r["val_metric"], r["trial"]))
    return rows
