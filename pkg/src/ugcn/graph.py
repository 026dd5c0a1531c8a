"""Graph containers, self-loop augmentation, normalization and batching.

Edges are stored as a lexicographically sorted ``(E, 2)`` integer array of
``(p, p')`` pairs meaning ``p'`` is in the neighborhood of ``p``; column 0 is
the aggregation target and column 1 the message source.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


def _canonical_edges(edges, symmetrize: bool = True) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if symmetrize:
        e = np.concatenate([e, e[:, ::-1]], axis=0)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """One undirected graph sample.

    The edge list is symmetrized, deduplicated and sorted on construction.
    ``node_labels`` keeps the raw dataset node labels (if any) so that
    features can be rebuilt later.
    """

    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    label: int = 0
    node_labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError("graph needs at least one node")
        edges = _canonical_edges(self.edges)
        if len(edges) and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise ValueError("edge endpoint out of range")
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != self.num_nodes or x.shape[1] < 1:
            raise ValueError(
                f"node_features must be {self.num_nodes}xC with C >= 1, got {x.shape}"
            )
        if self.label < 0:
            raise ValueError("label must be >= 0")
        edges.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "label", int(self.label))

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]

    def with_features(self, features) -> "Graph":
        return Graph(self.num_nodes, self.edges, features, self.label, self.node_labels)

    def degrees(self) -> np.ndarray:
        """Degree without self-loops."""
        e = self.edges[self.edges[:, 0] != self.edges[:, 1]]
        return np.bincount(e[:, 0], minlength=self.num_nodes)

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that old node ``perm[i]`` becomes node ``i``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        labels = None if self.node_labels is None else self.node_labels[perm]
        return Graph(self.num_nodes, inv[self.edges], self.node_features[perm], self.label, labels)


def add_self_loops(g: Graph) -> Graph:
    loops = np.repeat(np.arange(g.num_nodes), 2).reshape(-1, 2)
    return Graph(
        g.num_nodes,
        np.concatenate([g.edges, loops]),
        g.node_features,
        g.label,
        g.node_labels,
    )


def has_all_self_loops(edges: np.ndarray, num_nodes: int) -> bool:
    loops = edges[edges[:, 0] == edges[:, 1], 0]
    return len(np.unique(loops)) == num_nodes


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Per-edge weights of D^-1/2 (A + I) D^-1/2, aligned with ``edges``."""

    edges: np.ndarray
    values: np.ndarray
    num_nodes: int

    @cached_property
    def neighbor_index(self) -> list[np.ndarray]:
        starts = np.searchsorted(self.edges[:, 0], np.arange(self.num_nodes + 1))
        return [self.edges[starts[p] : starts[p + 1], 1] for p in range(self.num_nodes)]

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.num_nodes, self.num_nodes),
        )

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _normalize_edges(edges: np.ndarray, num_nodes: int) -> NormalizedAdjacency:
    deg = np.bincount(edges[:, 0], minlength=num_nodes).astype(np.float64)
    if np.any(deg == 0):
        isolated = np.flatnonzero(deg == 0)
        raise ValueError(f"nodes {isolated.tolist()} have degree 0; add self-loops first")
    inv_sqrt = 1.0 / np.sqrt(deg)
    values = inv_sqrt[edges[:, 0]] * inv_sqrt[edges[:, 1]]
    return NormalizedAdjacency(edges, values, num_nodes)


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    """Symmetric normalization of the graph's (already self-looped) adjacency."""
    return _normalize_edges(g.edges, g.num_nodes)


def degree_features(g: Graph, max_degree: int) -> np.ndarray:
    """One-hot encoding of ``min(degree, max_degree)``, ignoring self-loops."""
    deg = np.minimum(g.degrees(), max_degree)
    out = np.zeros((g.num_nodes, max_degree + 1))
    out[np.arange(g.num_nodes), deg] = 1.0
    return out


class SegmentIndex:
    """Precomputed grouping of rows (edges) by an integer segment id.

    Holds a sparse (num_segments x len(ids)) 0/1 matrix for sums and a stable
    sort order for per-segment maxima.
    """

    def __init__(self, ids, num_segments: int):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= num_segments):
            raise ValueError("segment id out of range")
        self.ids = ids
        self.num_segments = int(num_segments)
        self.matrix = sp.csr_matrix(
            (np.ones(len(ids)), (ids, np.arange(len(ids)))),
            shape=(self.num_segments, len(ids)),
        )
        self.order = np.argsort(ids, kind="stable")
        self.counts = np.bincount(ids, minlength=self.num_segments)
        sorted_ids = ids[self.order]
        self.is_sorted = bool(np.all(self.order == np.arange(len(ids))))
        self.starts = np.searchsorted(sorted_ids, np.arange(self.num_segments))

    def __len__(self):
        return len(self.ids)

    def sum(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ values)

    def max(self, values: np.ndarray) -> np.ndarray:
        """Per-segment maximum; empty segments get 0."""
        out = np.zeros((self.num_segments,) + values.shape[1:])
        nonempty = self.counts > 0
        if not nonempty.any():
            return out
        v = values if self.is_sorted else values[self.order]
        red = np.maximum.reduceat(v, self.starts[nonempty], axis=0)
        out[nonempty] = red
        return out


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Block-diagonal packing of several self-looped graphs."""

    node_features: np.ndarray
    edges: np.ndarray
    graph_indicator: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.offsets)

    @property
    def target(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def source(self) -> np.ndarray:
        return self.edges[:, 1]

    @cached_property
    def neighborhoods(self) -> SegmentIndex:
        """Edges grouped by target node, i.e. one segment per neighborhood."""
        return SegmentIndex(self.edges[:, 0], self.num_nodes)

    @cached_property
    def by_source(self) -> SegmentIndex:
        """Edges grouped by source node (scatter target for gathered sources)."""
        return SegmentIndex(self.edges[:, 1], self.num_nodes)

    @cached_property
    def graphs(self) -> SegmentIndex:
        """Nodes grouped by graph, used for readout."""
        return SegmentIndex(self.graph_indicator, self.num_graphs)

    @cached_property
    def neighbor_matrix(self) -> sp.csr_matrix:
        """0/1 matrix of Ã = A + I."""
        n = self.num_nodes
        return sp.csr_matrix((np.ones(len(self.edges)), (self.edges[:, 0], self.edges[:, 1])),
                             shape=(n, n))

    @cached_property
    def adjacency(self) -> NormalizedAdjacency:
        return _normalize_edges(self.edges, self.num_nodes)


def batch_graphs(graphs) -> GraphBatch:
    """Pack graphs into one disconnected graph, adding self-loops to each."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    c = graphs[0].num_features
    if any(g.num_features != c for g in graphs):
        raise ValueError("graphs in a batch must share the feature dimension")
    sizes = np.array([g.num_nodes for g in graphs])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    edges = []
    for g, off in zip(graphs, offsets):
        e = g.edges
        if not has_all_self_loops(e, g.num_nodes):
            e = add_self_loops(g).edges
        edges.append(e + off)
    # per-graph edges are sorted and offsets increase, so the concatenation is sorted
    all_edges = np.concatenate(edges)
    return GraphBatch(
        node_features=np.concatenate([g.node_features for g in graphs]),
        edges=all_edges,
        graph_indicator=np.repeat(np.arange(len(graphs)), sizes),
        labels=np.array([g.label for g in graphs], dtype=np.int64),
        offsets=offsets,
    )
