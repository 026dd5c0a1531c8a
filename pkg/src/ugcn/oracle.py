"""Dense reference implementations of depthwise / pointwise convolution.

Everything here materializes dense arrays on purpose and is kept separate
from the sparse, autodiff-backed layer code so the two can be compared.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .graph import Graph, add_self_loops, batch_graphs, normalize_adjacency
from .layers import GatParams, GcParams, gat_attention, gat_forward, gc_forward

MASTER_SEED = 42
EDGE_PROBABILITY = 0.4
TOLERANCE = 1e-10
GRID_TOLERANCE = 1e-12
NEGATIVE_CONTROL_THRESHOLD = 1e-3


@dataclass(frozen=True)
class DepthwiseKernel:
    """Weights K(p, p', c) for every neighborhood pair, aligned with ``edges``."""

    edges: np.ndarray  # (E, 2) pairs (p, p')
    weights: np.ndarray  # (E, C)

    def dense(self, num_nodes: int) -> np.ndarray:
        k = np.zeros((num_nodes, num_nodes, self.weights.shape[1]))
        k[self.edges[:, 0], self.edges[:, 1]] = self.weights
        return k


@dataclass(frozen=True)
class PointwiseKernelSet:
    """D kernels kappa^(d) of length C, stored as a (D, C) array."""

    kernels: np.ndarray

    @classmethod
    def from_weight_matrix(cls, w) -> "PointwiseKernelSet":
        # kappa^(d)(c) = W[c, d]
        return cls(np.asarray(w, dtype=np.float64).T.copy())


def dconv_generic(x, graph_edges, kernel: DepthwiseKernel) -> np.ndarray:
    """Y[p, c] = sum over p' in N(p) of K(p, p', c) * X[p', c]."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if kernel.weights.shape[1] != x.shape[1]:
        raise ValueError("kernel channel count does not match X")
    dense = kernel.dense(n)
    covered = np.zeros((n, n), dtype=bool)
    covered[kernel.edges[:, 0], kernel.edges[:, 1]] = True
    e = np.asarray(graph_edges)
    missing = ~covered[e[:, 0], e[:, 1]]
    if missing.any():
        raise ValueError(f"kernel has no entry for pair {tuple(e[missing][0])}")
    return np.einsum("pqc,qc->pc", dense, x)


def pconv_generic(y, kernels: PointwiseKernelSet) -> np.ndarray:
    """Z[p, d] = sum_c kappa^(d)(c) * Y[p, c]; no neighbor term."""
    y = np.asarray(y, dtype=np.float64)
    if kernels.kernels.shape[1] != y.shape[1]:
        raise ValueError("pointwise kernel length does not match channel count")
    return np.einsum("pc,dc->pd", y, kernels.kernels)


def gc_kernel(adjacency, c: int) -> DepthwiseKernel:
    """Channel-constant kernel K(p, p', c) = Â[p, p']."""
    w = np.repeat(adjacency.values[:, None], c, axis=1)
    return DepthwiseKernel(adjacency.edges, w)


def gat_kernel(edges, alpha, c: int) -> DepthwiseKernel:
    """Channel-constant kernel K(p, p', c) = alpha[p, p']."""
    a = np.asarray(alpha, dtype=np.float64).reshape(-1)
    return DepthwiseKernel(np.asarray(edges), np.repeat(a[:, None], c, axis=1))


def verify_gc_decomposition(graph: Graph, x, w, perturb: float = 0.0) -> float:
    """Max |GC layer - PConv(DConv(X))|; ``perturb`` shifts W in the DSConv path only."""
    g = add_self_loops(graph.with_features(x))
    batch = batch_graphs([g])
    z_layer = gc_forward(x, batch, GcParams(_const(w))).values
    adj = normalize_adjacency(g)
    y = dconv_generic(x, g.edges, gc_kernel(adj, np.shape(x)[1]))
    z_ds = pconv_generic(y, PointwiseKernelSet.from_weight_matrix(np.asarray(w) + perturb))
    return float(np.max(np.abs(z_layer - z_ds)))


def verify_gat_decomposition(graph: Graph, x, attention, w, perturb: float = 0.0) -> float:
    """Max |GAT layer - PConv(DConv(X))| with the DConv kernel built from attention."""
    g = add_self_loops(graph.with_features(x))
    batch = batch_graphs([g])
    params = GatParams(_const(w), _const(np.reshape(attention, (-1, 1))))
    z_layer = gat_forward(x, batch, params).values
    alpha = gat_attention(x, batch, params).values
    y = dconv_generic(x, g.edges, gat_kernel(batch.edges, alpha, np.shape(x)[1]))
    z_ds = pconv_generic(y, PointwiseKernelSet.from_weight_matrix(np.asarray(w) + perturb))
    return float(np.max(np.abs(z_layer - z_ds)))


def gat_uniform_deviation(graph: Graph, x, w) -> float:
    """With zero attention parameters GAT must equal mean aggregation (D^-1 Ã) X W."""
    g = add_self_loops(graph.with_features(x))
    batch = batch_graphs([g])
    d = np.shape(w)[1]
    z = gat_forward(x, batch, GatParams(_const(w), _const(np.zeros((2 * d, 1))))).values
    a = np.zeros((g.num_nodes, g.num_nodes))
    a[g.edges[:, 0], g.edges[:, 1]] = 1.0
    mean_agg = a / a.sum(axis=1, keepdims=True)
    return float(np.max(np.abs(z - mean_agg @ np.asarray(x) @ np.asarray(w))))


def _const(values) -> Tensor:
    return Tensor(values)


# ----------------------------------------------------------------- grid CNNs

def _check_kernel_size(k: int):
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")


def _windows(x: np.ndarray, k: int):
    """Yield (dy, dx, shifted) with shifted[i, j] = X[i + dy - r, j + dx - r] (zero padded)."""
    h, w, _ = x.shape
    r = k // 2
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, padded[dy : dy + h, dx : dx + w]


def grid_conv(x, kernels) -> np.ndarray:
    """Standard convolution: ``kernels`` is (D, K, K, C); returns H x W x D."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    d, k, k2, c = kernels.shape
    if k != k2 or c != x.shape[2]:
        raise ValueError("kernels must be (D, K, K, C) matching the input channels")
    _check_kernel_size(k)
    out = np.zeros(x.shape[:2] + (d,))
    for dy, dx, shifted in _windows(x, k):
        out += np.einsum("ijc,dc->ijd", shifted, kernels[:, dy, dx, :])
    return out


def grid_dconv(x, depth_kernel) -> np.ndarray:
    """Depthwise convolution with one K x K filter per channel (``depth_kernel`` K x K x C)."""
    x = np.asarray(x, dtype=np.float64)
    depth_kernel = np.asarray(depth_kernel, dtype=np.float64)
    k = depth_kernel.shape[0]
    _check_kernel_size(k)
    if depth_kernel.shape != (k, k, x.shape[2]):
        raise ValueError("depth kernel must be (K, K, C)")
    out = np.zeros_like(x)
    for dy, dx, shifted in _windows(x, k):
        out += shifted * depth_kernel[dy, dx]
    return out


def grid_dsconv(x, depth_kernel, point_kernels) -> np.ndarray:
    """Depthwise step followed by pointwise mixing with (D, C) ``point_kernels``."""
    y = grid_dconv(x, depth_kernel)
    return np.einsum("ijc,dc->ijd", y, np.asarray(point_kernels, dtype=np.float64))


# ------------------------------------------------------------ random suites

def random_graph(rng: np.random.Generator, n: int, p: float = EDGE_PROBABILITY,
                 c: int = 1) -> Graph:
    """Erdős–Rényi graph with uniform [-1, 1] features."""
    iu = np.triu_indices(n, k=1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return Graph(n, edges, rng.uniform(-1, 1, size=(n, c)))


def random_instance(rng: np.random.Generator, max_nodes: int = 20, max_c: int = 8,
                    max_d: int = 4):
    n = int(rng.integers(1, max_nodes + 1))
    c = int(rng.integers(1, max_c + 1))
    d = int(rng.integers(1, max_d + 1))
    g = random_graph(rng, n, c=c)
    w = rng.uniform(-1, 1, size=(c, d))
    attention = rng.uniform(-1, 1, size=2 * d)
    return g, g.node_features, w, attention


def run_suite(trials: int = 100, seed: int = MASTER_SEED, grid_trials: int = 20) -> list[dict]:
    """Run every equivalence check; each result has name, max_deviation, tolerance, passed."""
    rng = np.random.default_rng(seed)
    gc_dev = gat_dev = gc_neg = gat_neg = uniform_dev = 0.0
    for _ in range(trials):
        g, x, w, a = random_instance(rng)
        gc_dev = max(gc_dev, verify_gc_decomposition(g, x, w))
        gat_dev = max(gat_dev, verify_gat_decomposition(g, x, a, w))
        uniform_dev = max(uniform_dev, gat_uniform_deviation(g, x, w))
        gc_neg = max(gc_neg, verify_gc_decomposition(g, x, w, perturb=0.1))
        gat_neg = max(gat_neg, verify_gat_decomposition(g, x, a, w, perturb=0.1))

    grid_dev = 0.0
    for _ in range(grid_trials):
        x = rng.uniform(-1, 1, size=(6, 6, 3))
        depth = rng.uniform(-1, 1, size=(3, 3, 3))
        point = rng.uniform(-1, 1, size=(2, 3))
        full = depth[None, :, :, :] * point[:, None, None, :]
        grid_dev = max(grid_dev, float(np.max(np.abs(grid_conv(x, full) - grid_dsconv(x, depth, point)))))

    def check(name, value, tol, above=False):
        ok = value > tol if above else value <= tol
        return {"name": name, "max_deviation": float(value), "tolerance": tol,
                "passed": bool(ok), "direction": ">" if above else "<="}

    return [
        check("gc_decomposition", gc_dev, TOLERANCE),
        check("gat_decomposition", gat_dev, TOLERANCE),
        check("gat_zero_attention_is_mean", uniform_dev, TOLERANCE),
        check("gc_negative_control", gc_neg, NEGATIVE_CONTROL_THRESHOLD, above=True),
        check("gat_negative_control", gat_neg, NEGATIVE_CONTROL_THRESHOLD, above=True),
        check("grid_rank1_factorization", grid_dev, GRID_TOLERANCE),
    ]
