"""Task heads, losses, and metrics for node classification and KG completion.

The losses are tape ops with hand-derived adjoints (softmax minus target),
so the finite-difference checks cover them like any architecture op. Ranking
evaluation is pure numpy: scores for one (head, relation) query against all
entities, filtered against every known-true answer, with ties counted at
half weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import KgDataset
from .optim import ParamStore
from .tape import Tensor, add, matmul, mul, transpose

__all__ = [
    "ClassifierHead",
    "DistMultDecoder",
    "RankingMetrics",
    "cross_entropy_loss",
    "distmult_scores",
    "kl_label_smoothing_loss",
    "smoothed_targets",
    "filtered_rank",
    "kg_filtered_ranks",
    "ranking_metrics",
]


@dataclass(frozen=True)
class ClassifierHead:
    """Linear map from node representations to class logits."""

    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, store: ParamStore, dim: int, num_classes: int,
               rng: np.random.Generator) -> "ClassifierHead":
        return cls(
            w=store.glorot("classifier.w", (dim, num_classes), rng),
            b=store.zeros("classifier.b", (1, num_classes)),
        )

    def logits(self, h: Tensor) -> Tensor:
        return add(matmul(h, self.w), self.b)


@dataclass(frozen=True)
class DistMultDecoder:
    """Diagonal bilinear decoder: one trainable d-vector per relation
    (reverse relations included)."""

    relations: Tensor

    @classmethod
    def create(cls, store: ParamStore, num_relations: int, dim: int,
               rng: np.random.Generator) -> "DistMultDecoder":
        return cls(relations=store.glorot("decoder.relations", (num_relations, dim), rng))


def _log_softmax(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    return (z - m) - np.log(s), e / s


def cross_entropy_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> tuple[Tensor, float]:
    """Mean negative log-softmax over masked rows, plus argmax accuracy.

    Argmax ties resolve to the lowest class id.
    """
    rows = np.flatnonzero(np.asarray(mask))
    if rows.size == 0:
        raise ValueError("cross_entropy_loss: empty mask")
    z = logits.data[rows]
    y = np.asarray(labels)[rows]
    if (y < 0).any() or (y >= z.shape[1]).any():
        raise ValueError("cross_entropy_loss: label out of range")
    logp, p = _log_softmax(z)
    loss_val = float(-logp[np.arange(rows.size), y].mean())
    accuracy = float((z.argmax(axis=1) == y).mean())

    def backward(g):
        dz = p.copy()
        dz[np.arange(rows.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        full[rows] = (float(g) / rows.size) * dz
        logits.accumulate(full)

    return Tensor.from_op(np.asarray(loss_val), (logits,), "cross_entropy", backward), accuracy


def distmult_scores(head_repr: Tensor, relation_vec: Tensor, all_entities: Tensor) -> Tensor:
    """Score every entity as tail for each (head, relation) row: one matmul
    of (e_h * w_r) against the entity matrix."""
    return matmul(mul(head_repr, relation_vec), transpose(all_entities))


def smoothed_targets(tail_sets, num_entities: int, eps: float) -> np.ndarray:
    """Target rows: (1-eps) uniform over true tails plus eps uniform overall."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {eps}")
    targets = np.full((len(tail_sets), num_entities), eps / num_entities)
    for i, tails in enumerate(tail_sets):
        tails = np.asarray(sorted(tails), dtype=np.int64)
        if tails.size == 0:
            raise ValueError(f"empty tail set at row {i}")
        targets[i, tails] += (1.0 - eps) / tails.size
    return targets


def kl_label_smoothing_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean KL(target || softmax(logits)) per row; zero iff they coincide."""
    if logits.data.shape != targets.shape:
        raise ValueError(f"shape mismatch: logits {logits.data.shape} vs targets {targets.shape}")
    logp, p = _log_softmax(logits.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy = np.where(targets > 0, targets * np.log(targets), 0.0)
    loss_val = float((entropy - targets * logp).sum(axis=1).mean())

    def backward(g):
        logits.accumulate((float(g) / targets.shape[0]) * (p - targets))

    return Tensor.from_op(np.asarray(loss_val), (logits,), "kl_smoothed", backward)


def filtered_rank(scores: np.ndarray, target: int, known: set) -> float:
    """Rank of ``target`` among candidates after removing other known-true
    answers; ties count half each."""
    scores = np.asarray(scores).reshape(-1)
    keep = np.ones(scores.shape[0], dtype=bool)
    if known:
        keep[np.fromiter(known, dtype=np.int64)] = False
    keep[target] = True
    s_target = scores[target]
    greater = int(np.count_nonzero((scores > s_target) & keep))
    ties = int(np.count_nonzero((scores == s_target) & keep)) - 1
    return 1.0 + greater + ties / 2.0


def kg_filtered_ranks(entity_repr: np.ndarray, relation_weights: np.ndarray,
                      kg: KgDataset, triples: np.ndarray) -> np.ndarray:
    """Filtered ranks for a triple split, two per triple (tail then head
    replacement, the latter scored through the reverse relation)."""
    n_rel = len(kg.relation_names)
    ranks = np.empty(2 * len(triples))
    for i, (h, r, t) in enumerate(triples):
        h, r, t = int(h), int(r), int(t)
        tail_scores = (entity_repr[h] * relation_weights[r]) @ entity_repr.T
        ranks[2 * i] = filtered_rank(tail_scores, t, kg.filter_index.get((h, r), set()))
        head_scores = (entity_repr[t] * relation_weights[r + n_rel]) @ entity_repr.T
        ranks[2 * i + 1] = filtered_rank(head_scores, h, kg.filter_index.get((t, r + n_rel), set()))
    return ranks


@dataclass(frozen=True)
class RankingMetrics:
    mr: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float

    def to_dict(self) -> dict:
        return {"MR": self.mr, "MRR": self.mrr, "Hits@1": self.hits1,
                "Hits@3": self.hits3, "Hits@10": self.hits10}


def ranking_metrics(ranks) -> RankingMetrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("ranking_metrics: no ranks")
    return RankingMetrics(
        mr=float(ranks.mean()),
        mrr=float((1.0 / ranks).mean()),
        hits1=float((ranks <= 1).mean()),
        hits3=float((ranks <= 3).mean()),
        hits10=float((ranks <= 10).mean()),
    )
