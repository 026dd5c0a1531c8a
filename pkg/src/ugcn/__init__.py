"""Unified graph convolutional networks on a small numpy autodiff core."""
from .graph import (
    Graph,
    GraphBatch,
    NormalizedAdjacency,
    add_self_loops,
    batch_graphs,
    degree_features,
    normalize_adjacency,
)
from .layers import Ugcn, UgcnConfig, ugcn_forward

__all__ = [
    "Graph",
    "GraphBatch",
    "NormalizedAdjacency",
    "Ugcn",
    "UgcnConfig",
    "add_self_loops",
    "batch_graphs",
    "degree_features",
    "normalize_adjacency",
    "ugcn_forward",
]
__version__ = "0.1.0"
