"""A small reverse-mode autodiff over dense 2-D float64 arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the recorded graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import SegmentIndex

DTYPE = np.float64
LEAKY_SLOPE = 0.2
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        v = np.asarray(values, dtype=DTYPE)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        self.values = v
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(v) if requires_grad else None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product with row/column-vector broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.values * b.values,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.values, b.shape) if b.requires_grad else None,
        ),
    )


def scale_add(p, a, q, b) -> Tensor:
    """``p * a + q * b`` with ``a`` and ``b`` row vectors broadcast over rows."""
    p, a, q, b = as_tensor(p), as_tensor(a), as_tensor(q), as_tensor(b)
    out = p.values * a.values
    out += q.values * b.values

    def back(g):
        return (
            g * a.values if p.requires_grad else None,
            np.einsum("ij,ij->j", g, p.values)[None, :] if a.requires_grad else None,
            g * b.values if q.requires_grad else None,
            np.einsum("ij,ij->j", g, q.values)[None, :] if b.requires_grad else None,
        )

    return _make(out, (p, a, q, b), back)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.values**2, (x,), lambda g: (2.0 * x.values * g,))


def activation(x, kind: str = "relu", slope: float = LEAKY_SLOPE) -> Tensor:
    """``relu``, ``leaky_relu`` or ``identity``; the kink takes the positive slope."""
    x = as_tensor(x)
    if kind == "identity":
        return x
    if kind == "relu":
        neg = 0.0
    elif kind == "leaky_relu":
        neg = slope
    else:
        raise ValueError(f"unknown activation {kind!r}")
    pos = x.values >= 0
    if neg == 0.0:
        return _make(np.where(pos, x.values, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))
    return _make(np.where(pos, x.values, neg * x.values), (x,),
                 lambda g: (np.where(pos, g, neg * g),))


def relu(x) -> Tensor:
    return activation(x, "relu")


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    return activation(x, "leaky_relu", slope)


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return _make(
        a.values @ b.values,
        (a, b),
        lambda g: (
            g @ b.values.T if a.requires_grad else None,
            a.values.T @ g if b.requires_grad else None,
        ),
    )


def spmm(matrix: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times tensor."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {matrix.shape} @ {x.shape}")
    return _make(np.asarray(matrix @ x.values), (x,), lambda g: (np.asarray(matrix.T @ g),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.values.sum().reshape(1, 1), (x,), lambda g: (np.full(x.shape, g[0, 0]),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.values.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.values.T, (x,), lambda g: (g.T,))


def concat_cols(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    widths = np.cumsum([0] + [t.shape[1] for t in tensors])

    def back(g):
        return tuple(g[:, widths[i] : widths[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.values for t in tensors], axis=1), tensors, back)


# ------------------------------------------------------------------ indexing

def _as_segments(segments, num_segments=None) -> SegmentIndex:
    if isinstance(segments, SegmentIndex):
        return segments
    ids = np.asarray(segments, dtype=np.int64)
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if len(ids) else 0
    return SegmentIndex(ids, num_segments)


def gather_rows(x, index, segments: SegmentIndex | None = None) -> Tensor:
    """``x[index]``; pass a matching SegmentIndex to reuse it for the backward scatter."""
    x = as_tensor(x)
    index = np.asarray(index)

    def back(g):
        seg = segments if segments is not None else SegmentIndex(index, x.shape[0])
        return (seg.sum(g),)

    return _make(x.values[index], (x,), back)


def gather_cols(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index)

    def back(g):
        seg = SegmentIndex(index, x.shape[1])
        return (seg.sum(g.T).T,)

    return _make(x.values[:, index], (x,), back)


def segment_sum(values, segments, num_targets: int | None = None) -> Tensor:
    """Row ``t`` of the output sums the rows of ``values`` whose segment id is ``t``."""
    values = as_tensor(values)
    seg = _as_segments(segments, num_targets)
    if num_targets is not None and seg.num_segments != num_targets:
        raise ValueError("segment index built for a different target count")
    if len(seg) != values.shape[0]:
        raise ValueError("one segment id per row is required")
    return _make(seg.sum(values.values), (values,), lambda g: (g[seg.ids],))


def segment_softmax(scores, segments, num_targets: int | None = None) -> Tensor:
    """Softmax of each column taken separately within every segment."""
    scores = as_tensor(scores)
    seg = _as_segments(segments, num_targets)
    if len(seg) != scores.shape[0]:
        raise ValueError("one segment id per row is required")
    assert seg.counts.all(), "empty segment"
    shifted = scores.values - seg.max(scores.values)[seg.ids]
    e = np.exp(shifted)
    out = e / seg.sum(e)[seg.ids]

    def back(g):
        return (out * (g - seg.sum(out * g)[seg.ids]),)

    return _make(out, (scores,), back)


# ------------------------------------------------------- normalization & loss

class BatchNormState:
    """Affine parameters plus running statistics of one BatchNorm layer."""

    def __init__(self, width: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.gamma = Tensor(np.ones((1, width)), requires_grad=True, name="bn.gamma")
        self.beta = Tensor(np.zeros((1, width)), requires_grad=True, name="bn.beta")
        self.running_mean = np.zeros((1, width))
        self.running_var = np.ones((1, width))
        self.momentum = momentum
        self.eps = eps

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batch_norm(x, gamma, beta, state: BatchNormState | None = None,
               mode: str = "train", eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Column-wise batch normalization.

    Train mode uses batch statistics (biased variance) and, if ``state`` is
    given, updates its running statistics with the unbiased variance. Eval
    mode uses ``state``'s running statistics and mutates nothing.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[0]
    if mode == "train":
        if n < 2:
            raise ValueError("batch_norm in train mode needs at least 2 rows")
        mean = x.values.mean(axis=0, keepdims=True)
        centered = x.values - mean
        var = np.einsum("ij,ij->j", centered, centered)[None, :] / n
        if state is not None:
            m = state.momentum
            state.running_mean = (1 - m) * state.running_mean + m * mean
            state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
            eps = state.eps
    elif mode == "eval":
        if state is None:
            raise ValueError("eval mode needs running statistics")
        mean, var, eps = state.running_mean, state.running_var, state.eps
        centered = x.values - mean
    else:
        raise ValueError(f"unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.values
    out += beta.values

    def back(g):
        dgamma = np.einsum("ij,ij->j", g, xhat)[None, :]
        dbeta = g.sum(axis=0, keepdims=True)
        scale = gamma.values * inv_std
        if mode == "train":
            # d/dx of the batch-statistics normalization, reusing dgamma and dbeta
            dx = g - dbeta / n
            dx -= xhat * (dgamma / n)
            dx *= scale
        else:
            dx = g * scale
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), back)


def dropout(x, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.values * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    g_rows, k = logits.shape
    if labels.shape != (g_rows,):
        raise ValueError("one label per logit row is required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label out of range")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(g_rows), labels].mean()
    probs = np.exp(logp)

    def back(g):
        d = probs.copy()
        d[np.arange(g_rows), labels] -= 1.0
        return (d * (g[0, 0] / g_rows),)

    return _make(np.array([[loss]]), (logits,), back)
