"""Shared test utilities: finite-difference oracle and tiny graph builders.

The finite-difference gradient is the independent check for every tape op
and for end-to-end training graphs; it only ever evaluates forward passes.
"""

import numpy as np

from magna.graph import Graph
from magna.tape import Tensor

FD_STEP = 1e-5
FD_RTOL = 1e-4


def finite_diff_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, mutated in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1e-8, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def proj_loss(t: Tensor, proj: np.ndarray) -> Tensor:
    """Scalar loss sum(proj * t); fixed random proj makes gradients generic."""

    def backward(g):
        t.accumulate(float(g) * proj)

    return Tensor.from_op(np.asarray(float((proj * t.data).sum())), (t,), "proj", backward)


def check_grad(build_loss, params: dict, rtol: float = FD_RTOL) -> None:
    """Assert analytic grads of ``build_loss()`` match finite differences.

    ``params`` maps names to Tensors whose ``data`` the loss closes over.
    """
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        numeric = finite_diff_grad(lambda: float(build_loss().data), p.data)
        err = rel_error(p.grad, numeric)
        assert err <= rtol, f"gradient mismatch for {name}: rel error {err:.3e}"


def path_graph(n: int = 3) -> Graph:
    """Undirected path 0-1-...-n-1 stored in both directions, one relation."""
    edges = []
    for u in range(n - 1):
        edges.append((u, 0, u + 1))
        edges.append((u + 1, 0, u))
    return Graph(n, 1, edges, directed=False)


def star_graph(leaves: int = 5) -> Graph:
    edges = []
    for leaf in range(1, leaves + 1):
        edges.append((leaf, 0, 0))
        edges.append((0, 0, leaf))
    return Graph(leaves + 1, 1, edges, directed=False)


def random_graph(rng: np.random.Generator, n: int, extra_edges: int = 0,
                 num_relations: int = 1) -> Graph:
    """Connected-ish random undirected graph: a random tree plus extras."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(v))
        edges.add((u, v))
    for _ in range(extra_edges):
        u, v = int(rng.integers(n)), int(rng.integers(n))
        if u != v:
            edges.add((min(u, v), max(u, v)))
    directed = []
    for u, v in sorted(edges):
        r = int(rng.integers(num_relations))
        directed.append((u, r, v))
        directed.append((v, r, u))
    return Graph(n, num_relations, directed, directed=False).with_self_loops()


def random_attention(rng: np.random.Generator, graph: Graph) -> np.ndarray:
    """Row-stochastic per-edge attention from random scores, shape (E, 1)."""
    from magna.attention import attention_weights

    scores = Tensor(rng.normal(size=(graph.num_edges, 1)))
    return attention_weights(scores, graph).data.copy()


def separable_node_dataset(seed: int = 0, per_class: int = 10):
    """Two-community graph with class-aligned features; linearly separable.

    Mostly intra-class edges plus a couple of bridges, so message passing
    helps rather than hurts.
    """
    from magna.graph import NodeDataset

    rng = np.random.default_rng(seed)
    n = 2 * per_class
    labels = np.array([0] * per_class + [1] * per_class, dtype=np.int64)
    centers = np.array([[2.0, -1.0, 0.5, 0.0], [-1.5, 1.0, -0.5, 1.0]])
    features = centers[labels] + 0.3 * rng.normal(size=(n, 4))

    edges = set()
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        for i in range(len(members) - 1):
            edges.add((int(members[i]), int(members[i + 1])))
        for _ in range(per_class):
            u, v = rng.choice(members, size=2, replace=False)
            if u != v:
                edges.add((min(int(u), int(v)), max(int(u), int(v))))
    edges.add((0, per_class))  # one bridge between the communities
    directed = []
    for u, v in sorted(edges):
        directed.append((u, 0, v))
        directed.append((v, 0, u))
    graph = Graph(n, 1, directed, directed=False)

    split = np.full(n, -1, dtype=np.int64)
    order = rng.permutation(n)
    split[order[: n // 2]] = 0          # train
    split[order[n // 2 : 3 * n // 4]] = 1  # val
    split[order[3 * n // 4 :]] = 2      # test
    return NodeDataset(graph, features, labels, split, num_classes=2)


def compositional_kg(tmp_dir: str, groups: int = 12, bridges: int = 2,
                     held_out_valid=(0, 1), held_out_test=(2,)):
    """Toy KG where the r1;r2 composition implies r3.

    Each group i has a_i -r1-> b_i_j -r2-> c_i over ``bridges`` parallel
    middle nodes; a_i -r3-> c_i is in train except for the held-out groups,
    whose implied triples land in valid/test. Ranking them correctly
    requires propagating entity identity across two hops.
    """
    import os

    from magna.graph import load_kg_dataset

    os.makedirs(tmp_dir, exist_ok=True)
    train, valid, test = [], [], []
    for i in range(groups):
        a, c = f"a{i}", f"c{i}"
        for j in range(bridges):
            b = f"b{i}_{j}"
            train.append((a, "r1", b))
            train.append((b, "r2", c))
        triple = (a, "r3", c)
        if i in held_out_valid:
            valid.append(triple)
        elif i in held_out_test:
            test.append(triple)
        else:
            train.append(triple)
    for name, triples in (("train", train), ("valid", valid), ("test", test)):
        with open(os.path.join(tmp_dir, f"{name}.txt"), "w") as fh:
            for h, r, t in triples:
                fh.write(f"{h}\t{r}\t{t}\n")
    return load_kg_dataset(tmp_dir)
