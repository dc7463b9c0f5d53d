"""Stacked residual blocks around multi-head attention diffusion.

One block: Hhat = MultiHeadDiffusion(LN(H)) + H, then a feed-forward
sub-layer W2 relu(W1 LN(Hhat) + b1) + b2 + Hhat. Ablation switches strip the
pieces individually; with all three off a block degenerates to a one-hop
attention layer (elu(A @ H W) plus the residual), which is the classical
graph-attention baseline this architecture extends.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .attention import (
    AttentionHeadParams,
    DiffusionConfig,
    RelationTable,
    multi_head_diffusion,
)
from .graph import Graph
from .optim import ParamStore
from .tape import Tensor, add, dropout, elu, layer_norm, matmul, no_grad, relu

__all__ = ["NetworkConfig", "MagnaBlockParams", "MagnaNet", "ABLATION_FLAGS"]

ABLATION_FLAGS = ("no_diffusion", "no_layernorm", "no_feedforward")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; defaults follow the full-size setup
    (6 blocks, width 512, 8 heads)."""

    blocks: int = 6
    dim: int = 512
    heads: int = 8
    ffn_dim: int | None = None          # None means same width as dim
    alpha: float = 0.1
    hops: int = 6
    relation_dim: int = 100
    dropout_attention: float = 0.0
    dropout_feature: float = 0.0
    no_diffusion: bool = False
    no_layernorm: bool = False
    no_feedforward: bool = False

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.dim < 1 or self.heads < 1 or self.relation_dim < 1:
            raise ValueError("dim, heads and relation_dim must be positive")
        for rate in (self.dropout_attention, self.dropout_feature):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.diffusion()  # validates alpha/hops

    def diffusion(self) -> DiffusionConfig:
        return DiffusionConfig(alpha=self.alpha, hops=self.hops)

    @property
    def ffn_width(self) -> int:
        return self.dim if self.ffn_dim is None else self.ffn_dim

    def with_flags(self, flags) -> "NetworkConfig":
        unknown = set(flags) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        return replace(self, **{f: True for f in flags})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class MagnaBlockParams:
    heads: tuple
    w_o: Tensor
    ln1: tuple[Tensor, Tensor]
    ln2: tuple[Tensor, Tensor]
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, cfg: NetworkConfig,
               rng: np.random.Generator) -> "MagnaBlockParams":
        d, d_ff = cfg.dim, cfg.ffn_width
        heads = tuple(
            AttentionHeadParams.create(store, f"{prefix}.head{i}", d, cfg.relation_dim, rng)
            for i in range(cfg.heads)
        )
        return cls(
            heads=heads,
            w_o=store.glorot(f"{prefix}.w_o", (cfg.heads * d, d), rng),
            ln1=(store.full(f"{prefix}.ln1.gamma", (1, d), 1.0), store.zeros(f"{prefix}.ln1.beta", (1, d))),
            ln2=(store.full(f"{prefix}.ln2.gamma", (1, d), 1.0), store.zeros(f"{prefix}.ln2.beta", (1, d))),
            ffn_w1=store.glorot(f"{prefix}.ffn.w1", (d, d_ff), rng),
            ffn_b1=store.zeros(f"{prefix}.ffn.b1", (1, d_ff)),
            ffn_w2=store.glorot(f"{prefix}.ffn.w2", (d_ff, d), rng),
            ffn_b2=store.zeros(f"{prefix}.ffn.b2", (1, d)),
        )


class MagnaNet:
    """Encoder: input projection followed by ``cfg.blocks`` residual blocks.

    The network is bound to one graph; forward maps an (N, in_dim) tensor to
    (N, dim) node representations. Evaluation-mode forwards are pure reads
    and safe to run concurrently; training mutates parameters and is
    exclusive.
    """

    def __init__(self, cfg: NetworkConfig, graph: Graph, in_dim: int,
                 store: ParamStore, rng: np.random.Generator):
        self.cfg = cfg
        self.graph = graph
        self.in_dim = int(in_dim)
        self.store = store
        self.proj_w = store.glorot("input.w", (self.in_dim, cfg.dim), rng)
        self.proj_b = store.zeros("input.b", (1, cfg.dim))
        self.relations = RelationTable.create(
            store, "relations", graph.num_relations, cfg.relation_dim, rng
        )
        self.blocks = [
            MagnaBlockParams.create(store, f"block{i}", cfg, rng) for i in range(cfg.blocks)
        ]

    def block_forward(self, index: int, h_in: Tensor, *, training: bool = False,
                      rng: np.random.Generator | None = None,
                      capture: dict | None = None) -> Tensor:
        cfg = self.cfg
        bp = self.blocks[index]
        x = h_in
        if training and cfg.dropout_feature > 0.0:
            x = dropout(x, cfg.dropout_feature, rng, training)
        mixed = multi_head_diffusion(
            x,
            self.graph,
            bp.heads,
            self.relations,
            cfg.diffusion(),
            bp.w_o,
            ln=None if cfg.no_layernorm else bp.ln1,
            attention_dropout=cfg.dropout_attention,
            rng=rng,
            training=training,
            no_diffusion=cfg.no_diffusion,
            capture=capture,
            capture_prefix=f"block{index}.",
        )
        h_hat = add(mixed, x)
        if cfg.no_feedforward:
            return elu(h_hat)
        ffn_in = h_hat if cfg.no_layernorm else layer_norm(h_hat, bp.ln2[0], bp.ln2[1])
        hidden = relu(add(matmul(ffn_in, bp.ffn_w1), bp.ffn_b1))
        if training and cfg.dropout_feature > 0.0:
            hidden = dropout(hidden, cfg.dropout_feature, rng, training)
        return add(add(matmul(hidden, bp.ffn_w2), bp.ffn_b2), h_hat)

    def forward(self, x: Tensor, *, training: bool = False,
                rng: np.random.Generator | None = None,
                capture: dict | None = None) -> Tensor:
        if x.shape != (self.graph.num_nodes, self.in_dim):
            raise ValueError(
                f"input must have shape ({self.graph.num_nodes}, {self.in_dim}), got {x.shape}"
            )
        h = add(matmul(x, self.proj_w), self.proj_b)
        for i in range(self.cfg.blocks):
            h = self.block_forward(i, h, training=training, rng=rng, capture=capture)
        return h

    def one_hop_attention(self, x: Tensor, layer: int, head: int) -> np.ndarray:
        """Per-edge attention of one head at one layer, evaluation mode."""
        if not 0 <= layer < self.cfg.blocks:
            raise IndexError(f"layer {layer} out of range (0..{self.cfg.blocks - 1})")
        if not 0 <= head < self.cfg.heads:
            raise IndexError(f"head {head} out of range (0..{self.cfg.heads - 1})")
        capture: dict = {}
        with no_grad():
            h = add(matmul(x, self.proj_w), self.proj_b)
            for i in range(layer + 1):
                h = self.block_forward(i, h, capture=capture)
        return capture[f"block{layer}.head{head}"]
