"""Load, validate, and index graph datasets into an edge-indexed form.

Graphs are stored as flat (src, rel, dst) arrays sorted by destination, with
a CSR-style ``in_indptr`` so aggregation into a node scans one contiguous
segment. A source-sorted permutation is kept alongside for the reverse pass
of edge aggregation. Everything is immutable after construction and safe to
share across threads.

On-disk formats (UTF-8, LF, tab-separated):
  node dataset dir: features.tsv  ``node_id<TAB>v1,v2,...``
                    edges.tsv     ``src<TAB>dst[<TAB>relation]``
                    labels.tsv    ``node_id<TAB>class_id``
                    splits.tsv    ``node_id<TAB>train|val|test``
  KG dir:           train.txt / valid.txt / test.txt  ``head<TAB>relation<TAB>tail``
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "NodeDataset",
    "KgDataset",
    "GraphFormatError",
    "load_node_dataset",
    "load_kg_dataset",
    "save_node_dataset",
    "save_kg_dataset",
    "incoming_segment",
]

SPLIT_TOKENS = ("train", "val", "test")
SPLIT_NONE, SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = -1, 0, 1, 2


class GraphFormatError(ValueError):
    """Malformed or inconsistent dataset content, with file/line context."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}: " if line is None else f"{path}:{line}: "
        super().__init__(where + message)


class Graph:
    """Edge-indexed multigraph with relation ids.

    Edges are sorted by (dst, src, rel); ``in_indptr[i]:in_indptr[i+1]``
    delimits the incoming edges of node ``i``. ``out_perm``/``out_indptr``
    give the same edges grouped by source.
    """

    __slots__ = (
        "num_nodes",
        "num_relations",
        "src",
        "rel",
        "dst",
        "in_indptr",
        "directed",
    )

    def __init__(self, num_nodes, num_relations, edges, directed):
        self.num_nodes = int(num_nodes)
        self.num_relations = int(num_relations)
        self.directed = bool(directed)
        edges = list(edges)
        if edges:
            arr = np.asarray(edges, dtype=np.int64)
            src, rel, dst = arr[:, 0], arr[:, 1], arr[:, 2]
        else:
            src = rel = dst = np.zeros(0, dtype=np.int64)

        for name, ids, bound in (("node", src, self.num_nodes), ("node", dst, self.num_nodes), ("relation", rel, self.num_relations)):
            if ids.size and (ids.min() < 0 or ids.max() >= bound):
                raise GraphFormatError(f"{name} id out of range (0..{bound - 1})")
        if len({(int(s), int(r), int(d)) for s, r, d in zip(src, rel, dst)}) != len(src):
            raise GraphFormatError("duplicate (src, rel, dst) edge")

        order = np.lexsort((rel, src, dst))
        self.src = src[order]
        self.rel = rel[order]
        self.dst = dst[order]
        counts = np.bincount(self.dst, minlength=self.num_nodes)
        self.in_indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def edge_list(self) -> list[tuple[int, int, int]]:
        return [(int(s), int(r), int(d)) for s, r, d in zip(self.src, self.rel, self.dst)]

    def in_degree(self, node: int) -> int:
        return int(self.in_indptr[node + 1] - self.in_indptr[node])

    def with_self_loops(self) -> "Graph":
        """Add a relation-0 self loop to every node with no incoming edge.

        Keeps every attention row normalizable; no-op when none are missing.
        """
        missing = np.flatnonzero(np.diff(self.in_indptr) == 0)
        if missing.size == 0:
            return self
        extra = [(int(i), 0, int(i)) for i in missing]
        return Graph(
            self.num_nodes,
            max(self.num_relations, 1),
            self.edge_list() + extra,
            self.directed,
        )


def incoming_segment(graph: Graph, node: int) -> range:
    """Edge indices whose destination is ``node`` (may be empty)."""
    if not 0 <= node < graph.num_nodes:
        raise GraphFormatError(f"node id out of range (0..{graph.num_nodes - 1})")
    return range(int(graph.in_indptr[node]), int(graph.in_indptr[node + 1]))


@dataclass(frozen=True)
class NodeDataset:
    graph: Graph
    features: np.ndarray          # (num_nodes, d_n) float64
    labels: np.ndarray            # (num_nodes,) int64, -1 for unlabeled
    split: np.ndarray             # (num_nodes,) int64 in {SPLIT_*}
    num_classes: int

    def mask(self, which: int) -> np.ndarray:
        return self.split == which


@dataclass(frozen=True)
class KgDataset:
    graph: Graph                  # train triples plus reverse triples
    entity_names: list
    relation_names: list          # original relations only
    train: np.ndarray             # (n, 3) int64 with original relation ids
    valid: np.ndarray
    test: np.ndarray
    filter_index: dict = field(repr=False)   # (head, rel-or-reverse) -> set of tails

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        """Relation count including reverse directions."""
        return 2 * len(self.relation_names)

    def reverse_rel(self, rel: int) -> int:
        n = len(self.relation_names)
        return rel + n if rel < n else rel - n


# ---------------------------------------------------------------------------
# node dataset I/O


def _read_lines(path: str) -> list[tuple[int, str]]:
    if not os.path.isfile(path):
        raise GraphFormatError("missing file", path)
    with open(path, encoding="utf-8") as fh:
        return [(i, line.rstrip("\n")) for i, line in enumerate(fh, start=1) if line.strip()]


def _parse_int(text: str, what: str, path: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise GraphFormatError(f"bad {what} {text!r}", path, line) from None


def load_node_dataset(directory: str) -> NodeDataset:
    """Load a node-classification dataset from its TSV directory.

    Edges are treated as undirected and stored in both directions; rows
    without a relation column get relation id 0.
    """
    feat_path = os.path.join(directory, "features.tsv")
    rows = {}
    width = None
    for lineno, line in _read_lines(feat_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError("expected node_id<TAB>values", feat_path, lineno)
        nid = _parse_int(parts[0], "node id", feat_path, lineno)
        try:
            vec = [float(v) for v in parts[1].split(",")]
        except ValueError:
            raise GraphFormatError("bad feature value", feat_path, lineno) from None
        if width is None:
            width = len(vec)
        elif len(vec) != width:
            raise GraphFormatError(f"ragged feature row ({len(vec)} values, expected {width})", feat_path, lineno)
        if nid in rows:
            raise GraphFormatError(f"duplicate node id {nid}", feat_path, lineno)
        rows[nid] = vec
    num_nodes = len(rows)
    if num_nodes == 0:
        raise GraphFormatError("no feature rows", feat_path)
    if sorted(rows) != list(range(num_nodes)):
        raise GraphFormatError("node ids must be exactly 0..N-1", feat_path)
    features = np.array([rows[i] for i in range(num_nodes)], dtype=np.float64)

    def check_node(nid, path, lineno):
        if not 0 <= nid < num_nodes:
            raise GraphFormatError("node id out of range", path, lineno)

    edge_path = os.path.join(directory, "edges.tsv")
    edges = []
    num_relations = 1
    for lineno, line in _read_lines(edge_path):
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise GraphFormatError("expected src<TAB>dst[<TAB>relation]", edge_path, lineno)
        u = _parse_int(parts[0], "node id", edge_path, lineno)
        v = _parse_int(parts[1], "node id", edge_path, lineno)
        r = _parse_int(parts[2], "relation id", edge_path, lineno) if len(parts) == 3 else 0
        check_node(u, edge_path, lineno)
        check_node(v, edge_path, lineno)
        if r < 0:
            raise GraphFormatError("relation id out of range", edge_path, lineno)
        num_relations = max(num_relations, r + 1)
        edges.append((u, r, v))
        if u != v:
            edges.append((v, r, u))

    label_path = os.path.join(directory, "labels.tsv")
    labels = np.full(num_nodes, -1, dtype=np.int64)
    for lineno, line in _read_lines(label_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError("expected node_id<TAB>class_id", label_path, lineno)
        nid = _parse_int(parts[0], "node id", label_path, lineno)
        cls = _parse_int(parts[1], "class id", label_path, lineno)
        check_node(nid, label_path, lineno)
        if cls < 0:
            raise GraphFormatError("class id must be nonnegative", label_path, lineno)
        labels[nid] = cls
    num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0

    split_path = os.path.join(directory, "splits.tsv")
    split = np.full(num_nodes, SPLIT_NONE, dtype=np.int64)
    for lineno, line in _read_lines(split_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError("expected node_id<TAB>split", split_path, lineno)
        nid = _parse_int(parts[0], "node id", split_path, lineno)
        check_node(nid, split_path, lineno)
        if parts[1] not in SPLIT_TOKENS:
            raise GraphFormatError(f"unknown split token {parts[1]!r}", split_path, lineno)
        if split[nid] != SPLIT_NONE:
            raise GraphFormatError(f"node {nid} assigned to more than one split", split_path, lineno)
        split[nid] = SPLIT_TOKENS.index(parts[1])

    labelled = (split != SPLIT_NONE) & (labels < 0)
    if labelled.any():
        raise GraphFormatError(f"split node {int(np.flatnonzero(labelled)[0])} has no label", split_path)

    try:
        graph = Graph(num_nodes, num_relations, edges, directed=False)
    except GraphFormatError as exc:
        raise GraphFormatError(str(exc), edge_path) from None
    return NodeDataset(graph, features, labels, split, num_classes)


def save_node_dataset(ds: NodeDataset, directory: str) -> None:
    """Write a node dataset back to its TSV directory (inverse of load)."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "features.tsv"), "w", encoding="utf-8") as fh:
        for i, row in enumerate(ds.features):
            fh.write(f"{i}\t{','.join(repr(float(v)) for v in row)}\n")
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8") as fh:
        for s, r, d in ds.graph.edge_list():
            if s <= d:  # undirected storage holds both directions; emit one
                fh.write(f"{s}\t{d}\t{r}\n")
    with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8") as fh:
        for i, cls in enumerate(ds.labels):
            if cls >= 0:
                fh.write(f"{i}\t{int(cls)}\n")
    with open(os.path.join(directory, "splits.tsv"), "w", encoding="utf-8") as fh:
        for i, s in enumerate(ds.split):
            if s != SPLIT_NONE:
                fh.write(f"{i}\t{SPLIT_TOKENS[int(s)]}\n")


# ---------------------------------------------------------------------------
# knowledge graph I/O


def _read_triples(path: str) -> list[tuple[str, str, str]]:
    triples = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError("expected head<TAB>relation<TAB>tail", path, lineno)
        triples.append(tuple(parts))
    return triples


def load_kg_dataset(directory: str, strict: bool = False) -> KgDataset:
    """Load a KG from train/valid/test triple files.

    String ids are interned in first-appearance order (train first). The
    graph holds every train triple in both directions: relation ``k`` gets
    a reverse twin ``k + num_relations``. With ``strict`` set, entities or
    relations appearing only in valid/test are an error.
    """
    raw = {name: _read_triples(os.path.join(directory, f"{name}.txt")) for name in ("train", "valid", "test")}

    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    for name in ("train", "valid", "test"):
        path = os.path.join(directory, f"{name}.txt")
        for h, r, t in raw[name]:
            for ent in (h, t):
                if ent not in entity_ids:
                    if strict and name != "train":
                        raise GraphFormatError(f"entity {ent!r} unseen in train", path)
                    entity_ids[ent] = len(entity_ids)
            if r not in relation_ids:
                if strict and name != "train":
                    raise GraphFormatError(f"relation {r!r} unseen in train", path)
                relation_ids[r] = len(relation_ids)

    def to_ids(triples):
        if not triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(
            [(entity_ids[h], relation_ids[r], entity_ids[t]) for h, r, t in triples],
            dtype=np.int64,
        )

    train, valid, test = (to_ids(raw[n]) for n in ("train", "valid", "test"))
    n_rel = len(relation_ids)

    edges = []
    for h, r, t in train:
        edges.append((int(h), int(r), int(t)))
        edges.append((int(t), int(r) + n_rel, int(h)))
    try:
        graph = Graph(len(entity_ids), 2 * n_rel, edges, directed=True)
    except GraphFormatError as exc:
        raise GraphFormatError(str(exc), os.path.join(directory, "train.txt")) from None

    filter_index: dict[tuple[int, int], set[int]] = {}
    for split in (train, valid, test):
        for h, r, t in split:
            filter_index.setdefault((int(h), int(r)), set()).add(int(t))
            filter_index.setdefault((int(t), int(r) + n_rel), set()).add(int(h))

    entity_names = [None] * len(entity_ids)
    for name, i in entity_ids.items():
        entity_names[i] = name
    relation_names = [None] * n_rel
    for name, i in relation_ids.items():
        relation_names[i] = name
    return KgDataset(graph, entity_names, relation_names, train, valid, test, filter_index)


def save_kg_dataset(kg: KgDataset, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, triples in (("train", kg.train), ("valid", kg.valid), ("test", kg.test)):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{kg.entity_names[h]}\t{kg.relation_names[r]}\t{kg.entity_names[t]}\n")
