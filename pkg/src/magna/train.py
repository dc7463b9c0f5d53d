"""Optimization loops with validation-driven early stopping.

Both trainers run full-graph forward/backward per step, track the best
validation metric, and only ever touch the test split once, after the loop,
with the best parameters restored. All randomness flows from named streams
spawned off the run seed, so two runs with the same config and seed produce
identical numbers.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, KgDataset, NodeDataset
from .model import MagnaNet, NetworkConfig
from .optim import Adam, ParamStore
from .tape import Tensor, gather_rows, no_grad
from .tasks import (
    ClassifierHead,
    DistMultDecoder,
    cross_entropy_loss,
    distmult_scores,
    kg_filtered_ranks,
    kl_label_smoothing_loss,
    ranking_metrics,
    smoothed_targets,
)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "EarlyStopper",
    "NodeModel",
    "KgModel",
    "build_node_model",
    "build_kg_model",
    "node_accuracy",
    "kg_validation_mrr",
    "train_node_classifier",
    "train_kg",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    weight_decay: float = 5e-4
    epochs: int | None = None       # None: 1000 for node runs, 400 for KG runs
    window: int = 200
    seed: int = 0
    batch_size: int = 1024          # KG query groups per step
    label_smoothing: float = 0.1    # KG loss only

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("early-stop window must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epoch cap must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def epoch_cap(self, task: str) -> int:
        if self.epochs is not None:
            return self.epochs
        return 1000 if task == "node" else 400

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainReport:
    task: str
    seed: int
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("-inf")
    test_metric: float = float("nan")
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def metrics_dict(self) -> dict:
        """The compact metrics.json payload. Deterministic given config and
        seed; wall-clock timing stays in the full report."""
        return {
            "task": self.task,
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "val_metric": self.best_val,
            "test_metric": self.test_metric,
        }


class EarlyStopper:
    """Stop when the metric has not strictly improved for ``window`` epochs."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.best = float("-inf")
        self.best_epoch = 0
        self._since = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record one epoch; returns True if this is a new best."""
        if metric > self.best:
            self.best = metric
            self.best_epoch = epoch
            self._since = 0
            return True
        self._since += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self._since >= self.window


def _streams(seed: int, n: int = 3) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# node classification


@dataclass
class NodeModel:
    net: MagnaNet
    head: ClassifierHead
    store: ParamStore
    features: Tensor

    def logits(self, *, training: bool = False, rng=None) -> Tensor:
        return self.head.logits(self.net.forward(self.features, training=training, rng=rng))


def build_node_model(dataset: NodeDataset, cfg: NetworkConfig,
                     rng: np.random.Generator) -> NodeModel:
    graph = dataset.graph.with_self_loops()
    store = ParamStore()
    net = MagnaNet(cfg, graph, dataset.features.shape[1], store, rng)
    head = ClassifierHead.create(store, cfg.dim, dataset.num_classes, rng)
    return NodeModel(net, head, store, Tensor(dataset.features))


def node_accuracy(model: NodeModel, dataset: NodeDataset, which: int) -> float:
    with no_grad():
        logits = model.logits()
    _, acc = cross_entropy_loss(logits, dataset.labels, dataset.mask(which))
    return acc


def train_node_classifier(dataset: NodeDataset, net_cfg: NetworkConfig,
                          train_cfg: TrainConfig) -> tuple[TrainReport, NodeModel]:
    start = time.monotonic()
    init_rng, drop_rng, _ = _streams(train_cfg.seed)
    model = build_node_model(dataset, net_cfg, init_rng)
    optimizer = Adam(model.store, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    stopper = EarlyStopper(train_cfg.window)
    report = TrainReport(task="node", seed=train_cfg.seed)
    train_mask = dataset.mask(SPLIT_TRAIN)
    best_params = model.store.snapshot()

    for epoch in range(1, train_cfg.epoch_cap("node") + 1):
        model.store.zero_grad()
        logits = model.logits(training=True, rng=drop_rng)
        loss, _ = cross_entropy_loss(logits, dataset.labels, train_mask)
        loss.backward()
        optimizer.step()
        report.train_loss.append(float(loss.data))

        val_acc = node_accuracy(model, dataset, SPLIT_VAL)
        report.val_metric.append(val_acc)
        if stopper.update(epoch, val_acc):
            best_params = model.store.snapshot()
        if stopper.should_stop:
            break

    model.store.restore(best_params)
    report.best_epoch = stopper.best_epoch
    report.best_val = stopper.best
    report.test_metric = node_accuracy(model, dataset, SPLIT_TEST)
    report.wall_seconds = time.monotonic() - start
    return report, model


# ---------------------------------------------------------------------------
# knowledge-graph completion


@dataclass
class KgModel:
    net: MagnaNet
    decoder: DistMultDecoder
    store: ParamStore
    kg: KgDataset

    def entity_repr(self, *, training: bool = False, rng=None) -> Tensor:
        return self.net.forward(self.store["entities"], training=training, rng=rng)


def build_kg_model(kg: KgDataset, cfg: NetworkConfig, rng: np.random.Generator,
                   entity_dim: int = 100) -> KgModel:
    graph = kg.graph.with_self_loops()
    store = ParamStore()
    store.glorot("entities", (kg.num_entities, entity_dim), rng)
    net = MagnaNet(cfg, graph, entity_dim, store, rng)
    decoder = DistMultDecoder.create(store, kg.num_relations, cfg.dim, rng)
    return KgModel(net, decoder, store, kg)


def _train_queries(kg: KgDataset) -> tuple[np.ndarray, np.ndarray, list]:
    """Unique (entity, relation) queries over the train split, reverse
    direction included, each with its full tail set."""
    n_rel = len(kg.relation_names)
    groups: dict[tuple[int, int], set] = {}
    for h, r, t in kg.train:
        groups.setdefault((int(h), int(r)), set()).add(int(t))
        groups.setdefault((int(t), int(r) + n_rel), set()).add(int(h))
    keys = sorted(groups)
    heads = np.array([k[0] for k in keys], dtype=np.int64)
    rels = np.array([k[1] for k in keys], dtype=np.int64)
    tails = [groups[k] for k in keys]
    return heads, rels, tails


def kg_validation_mrr(model: KgModel, triples: np.ndarray) -> float:
    if len(triples) == 0:
        raise ValueError("no triples to evaluate")
    with no_grad():
        entity = model.entity_repr().data
    ranks = kg_filtered_ranks(entity, model.decoder.relations.data, model.kg, triples)
    return ranking_metrics(ranks).mrr


def train_kg(kg: KgDataset, net_cfg: NetworkConfig, train_cfg: TrainConfig,
             entity_dim: int = 100) -> tuple[TrainReport, KgModel]:
    start = time.monotonic()
    init_rng, drop_rng, shuffle_rng = _streams(train_cfg.seed)
    model = build_kg_model(kg, net_cfg, init_rng, entity_dim=entity_dim)
    optimizer = Adam(model.store, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    stopper = EarlyStopper(train_cfg.window)
    report = TrainReport(task="kg", seed=train_cfg.seed)
    heads, rels, tails = _train_queries(kg)
    targets_full = smoothed_targets(tails, kg.num_entities, train_cfg.label_smoothing)
    best_params = model.store.snapshot()

    for epoch in range(1, train_cfg.epoch_cap("kg") + 1):
        order = shuffle_rng.permutation(len(heads))
        epoch_loss = 0.0
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = order[lo : lo + train_cfg.batch_size]
            model.store.zero_grad()
            entity = model.entity_repr(training=True, rng=drop_rng)
            scores = distmult_scores(
                gather_rows(entity, heads[batch]),
                gather_rows(model.decoder.relations, rels[batch]),
                entity,
            )
            loss = kl_label_smoothing_loss(scores, targets_full[batch])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.data) * len(batch)
        report.train_loss.append(epoch_loss / len(heads))

        val_mrr = kg_validation_mrr(model, kg.valid)
        report.val_metric.append(val_mrr)
        if stopper.update(epoch, val_mrr):
            best_params = model.store.snapshot()
        if stopper.should_stop:
            break

    model.store.restore(best_params)
    report.best_epoch = stopper.best_epoch
    report.best_val = stopper.best
    with no_grad():
        entity = model.entity_repr().data
    test_ranks = kg_filtered_ranks(entity, model.decoder.relations.data, kg, kg.test)
    report.test_metric = ranking_metrics(test_ranks).mrr
    report.wall_seconds = time.monotonic() - start
    return report, model
