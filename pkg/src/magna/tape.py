"""Dense matrix values with reverse-mode differentiation over a fixed op set.

Values are numpy arrays (0-d scalars, per-edge vectors, or 2-d matrices;
float64 by default). Every op checks its result for NaN/Inf, and records a
backward closure when any input requires gradients. ``Tensor.backward()``
replays the recorded graph in reverse topological order, accumulating exact
gradients of a scalar into every reachable tensor with ``requires_grad``.

There is deliberately no general autodiff here: the vocabulary is the handful
of ops the architecture needs, so every adjoint is short enough to audit.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "Tensor",
    "NonFiniteError",
    "no_grad",
    "matmul",
    "transpose",
    "add",
    "mul",
    "scale",
    "concat_cols",
    "slice_cols",
    "leaky_relu",
    "relu",
    "elu",
    "tanh",
    "dropout",
    "layer_norm",
    "gather_rows",
    "scatter_add_rows",
    "segment_softmax",
    "edge_spmm",
    "count_ops",
]


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable adjoint recording inside the block.

    Evaluation forwards run in constant memory under this: intermediates
    are freed as soon as they go out of scope instead of living on the tape.
    Values are unchanged. Not for use concurrently with a training forward
    (training is exclusive per the concurrency contract).
    """
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(data: np.ndarray, op: str) -> None:
    # one allocation-free reduction; a sum that overflows to inf on genuinely
    # finite data falls through to the exact elementwise check
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A value on the tape.

    ``grad`` is populated by ``backward()`` and has the same shape as
    ``data``. Tensors created by ops keep references to their parents only
    while gradients are required, so evaluation-mode forwards hold no tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.ndim > 2:
            raise ValueError(f"tensors are at most 2-d, got shape {self.data.shape}")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: tuple, op: str, backward) -> "Tensor":
        """Create an op result; records the adjoint only if a parent needs it."""
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor."""
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def count_ops(root: Tensor, op_name: str) -> int:
    """Number of distinct nodes named ``op_name`` in the graph below ``root``."""
    seen, stack, n = set(), [root], 0
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.op == op_name:
            n += 1
        stack.extend(t._parents)
    return n


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"{op}: ndim mismatch {a.shape} vs {b.shape}")
    for da, db in zip(a.shape, b.shape):
        if da != db and 1 not in (da, db):
            raise ValueError(f"{op}: incompatible shapes {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# op set


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return Tensor.from_op(out_data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a.accumulate(g.T)

    return Tensor.from_op(a.data.T, (a,), "transpose", backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return Tensor.from_op(out_data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor.from_op(out_data, (a, b), "mul", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a.accumulate(g * c)

    return Tensor.from_op(a.data * c, (a,), "scale", backward)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    rows = {t.data.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ValueError("concat_cols: row counts differ")
    widths = [t.data.shape[1] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=1)

    def backward(g):
        j = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t.accumulate(g[:, j : j + w])
            j += w

    return Tensor.from_op(out_data, tuple(tensors), "concat_cols", backward)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    out_data = a.data[:, j0:j1].copy()

    def backward(g):
        da = np.zeros_like(a.data)
        da[:, j0:j1] = g
        a.accumulate(da)

    return Tensor.from_op(out_data, (a,), "slice_cols", backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    out_data = np.where(pos, a.data, slope * a.data)

    def backward(g):
        a.accumulate(g * np.where(pos, 1.0, slope))

    return Tensor.from_op(out_data, (a,), "leaky_relu", backward)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out_data = np.where(pos, a.data, 0.0)

    def backward(g):
        a.accumulate(g * pos)

    return Tensor.from_op(out_data, (a,), "relu", backward)


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    expm1 = np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(pos, a.data, expm1)

    def backward(g):
        a.accumulate(g * np.where(pos, 1.0, expm1 + 1.0))

    return Tensor.from_op(out_data, (a,), "elu", backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out_data * out_data))

    return Tensor.from_op(out_data, (a,), "tanh", backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: retained entries scaled by 1/(1-p) so the mean is kept."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = rng.random(a.data.shape) >= p
    factor = keep / (1.0 - p)
    out_data = a.data * factor

    def backward(g):
        a.accumulate(g * factor)

    return Tensor.from_op(out_data, (a,), "dropout", backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with learnable per-feature affine parameters."""
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=0, keepdims=True))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=1, keepdims=True)
            m2 = (gg * xhat).mean(axis=1, keepdims=True)
            a.accumulate((gg - m1 - xhat * m2) * inv)

    return Tensor.from_op(out_data, (a, gamma, beta), "layer_norm", backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        a.accumulate(da)

    return Tensor.from_op(out_data, (a,), "gather_rows", backward)


def scatter_add_rows(a: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    """Row ``i`` of the result sums the rows of ``a`` whose index maps to ``i``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[0] != a.data.shape[0]:
        raise ValueError("scatter_add_rows: index length must match row count")
    out_data = np.zeros((num_rows,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(out_data, idx, a.data)

    def backward(g):
        a.accumulate(g[idx])

    return Tensor.from_op(out_data, (a,), "scatter_add_rows", backward)


# ---------------------------------------------------------------------------
# segment helpers (edges sorted by destination; indptr is CSR-style)


def _segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    starts = indptr[:-1]
    out = np.zeros((len(starts),) + values.shape[1:], dtype=values.dtype)
    nonempty = indptr[1:] > starts
    if values.shape[0] and nonempty.any():
        # consecutive nonempty starts delimit exactly one segment's rows
        out[nonempty] = np.add.reduceat(values, starts[nonempty], axis=0)
    return out


def _segment_max(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    starts = indptr[:-1]
    out = np.zeros((len(starts),) + values.shape[1:], dtype=values.dtype)
    nonempty = indptr[1:] > starts
    if values.shape[0] and nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, starts[nonempty], axis=0)
    return out


def _expand_segments(seg_values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    return np.repeat(seg_values, np.diff(indptr), axis=0)


def segment_softmax(scores: Tensor, indptr: np.ndarray) -> Tensor:
    """Softmax within each contiguous segment of a per-edge score vector.

    Missing pairs are never materialized: normalizing only over existing
    edges is what masking absent entries to -inf would produce. Max
    subtraction keeps exponentials in range.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    if indptr[-1] != scores.data.shape[0]:
        raise ValueError("segment_softmax: segments must partition the edge list")
    x = scores.data
    m = _segment_max(x, indptr)
    e = np.exp(x - _expand_segments(m, indptr))
    s = _segment_sum(e, indptr)
    out_data = e / _expand_segments(s, indptr)

    def backward(g):
        gy = g * out_data
        seg = _segment_sum(gy, indptr)
        scores.accumulate(gy - out_data * _expand_segments(seg, indptr))

    return Tensor.from_op(out_data, (scores,), "segment_softmax", backward)


def edge_spmm(att: Tensor, h: Tensor, graph) -> Tensor:
    """Aggregate ``h`` rows along edges: out[i] = sum over edges (j,k,i) of att_e * h[j].

    ``att`` is per-edge, shape (E, 1), aligned with ``graph`` edge order
    (sorted by destination). Cost is linear in edges times columns: the
    product and its adjoint run through a CSR view of the edge layout
    (``src``, ``in_indptr``); the per-edge attention gradient is a sampled
    row-dot of the up- and downstream features.
    """
    if att.data.ndim != 2 or att.data.shape[1] != 1:
        raise ValueError("edge_spmm: attention must have shape (E, 1)")
    if att.data.shape[0] != graph.num_edges:
        raise ValueError("edge_spmm: attention length must equal edge count")
    if h.data.shape[0] != graph.num_nodes:
        raise ValueError("edge_spmm: feature rows must equal node count")
    n = graph.num_nodes
    matrix = sparse.csr_matrix(
        (att.data[:, 0], graph.src, graph.in_indptr), shape=(n, n)
    )
    out_data = matrix @ h.data

    def backward(g):
        if att.requires_grad:
            att.accumulate((g[graph.dst] * h.data[graph.src]).sum(axis=1, keepdims=True))
        if h.requires_grad:
            h.accumulate(matrix.T @ g)

    return Tensor.from_op(out_data, (att, h), "edge_spmm", backward)
