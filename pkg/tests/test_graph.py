import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ugcn.graph import (
    Graph, SegmentIndex, add_self_loops, batch_graphs, degree_features, has_all_self_loops,
    normalize_adjacency,
)
from ugcn.layers import GcParams, gc_forward
from ugcn.autodiff import Tensor

from _factories import erdos_renyi


def dense_normalized(g):
    a = np.zeros((g.num_nodes, g.num_nodes))
    a[g.edges[:, 0], g.edges[:, 1]] = 1.0
    a = np.maximum(a, np.eye(g.num_nodes))
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def test_edges_are_symmetrized_and_deduplicated():
    g = Graph(3, [(0, 1), (1, 0), (1, 2), (1, 2)], np.zeros((3, 1)))
    assert g.edges.tolist() == [[0, 1], [1, 0], [1, 2], [2, 1]]
    assert g.degrees().tolist() == [1, 2, 1]


def test_graph_rejects_bad_input():
    with pytest.raises(ValueError):
        Graph(2, [(0, 2)], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Graph(2, [(0, 1)], np.zeros((3, 1)))


def test_self_loops_added_once():
    g = add_self_loops(Graph(3, [(0, 1)], np.zeros((3, 1))))
    assert has_all_self_loops(g.edges, 3)
    assert len(add_self_loops(g).edges) == len(g.edges) == 5


def test_triangle_normalizes_to_one_third():
    g = add_self_loops(Graph(3, [(0, 1), (1, 2), (0, 2)], np.zeros((3, 1))))
    np.testing.assert_allclose(normalize_adjacency(g).dense(), np.full((3, 3), 1 / 3))


def test_single_edge_normalizes_to_one_half():
    g = add_self_loops(Graph(2, [(0, 1)], np.zeros((2, 1))))
    np.testing.assert_allclose(normalize_adjacency(g).dense(), np.full((2, 2), 0.5))


def test_isolated_node_without_loop_is_an_error():
    with pytest.raises(ValueError, match="degree 0"):
        normalize_adjacency(Graph(3, [(0, 1)], np.zeros((3, 1))))


def test_normalized_adjacency_matches_dense_formula_and_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(100):
        g = add_self_loops(erdos_renyi(rng, int(rng.integers(1, 21))))
        m = normalize_adjacency(g).dense()
        np.testing.assert_allclose(m, dense_normalized(g), rtol=0, atol=1e-12)
        np.testing.assert_allclose(m, m.T, rtol=0, atol=1e-15)


def test_batch_is_block_diagonal():
    rng = np.random.default_rng(1)
    graphs = [erdos_renyi(rng, n) for n in (4, 1, 7)]
    batch = batch_graphs(graphs)
    assert batch.num_nodes == 12 and batch.num_graphs == 3
    assert batch.graph_indicator.tolist() == [0] * 4 + [1] + [2] * 7
    same = batch.graph_indicator[batch.target] == batch.graph_indicator[batch.source]
    assert same.all()


def test_batched_gc_equals_per_graph_gc():
    rng = np.random.default_rng(2)
    graphs = [erdos_renyi(rng, int(rng.integers(1, 12))) for _ in range(8)]
    params = GcParams(Tensor(rng.normal(size=(3, 5))))
    whole = gc_forward(batch_graphs(graphs).node_features, batch_graphs(graphs), params).values
    parts = np.concatenate([
        gc_forward(g.node_features, batch_graphs([g]), params).values for g in graphs
    ])
    np.testing.assert_allclose(whole, parts, rtol=0, atol=1e-10)


def test_batch_rejects_empty_and_mixed_widths():
    with pytest.raises(ValueError):
        batch_graphs([])
    with pytest.raises(ValueError):
        batch_graphs([Graph(1, [], np.zeros((1, 2))), Graph(1, [], np.zeros((1, 3)))])


def test_degree_features_cap():
    star = Graph(5, [(0, i) for i in range(1, 5)], np.zeros((5, 1)))
    x = degree_features(star, 2)
    assert x.shape == (5, 3)
    assert x.argmax(axis=1).tolist() == [2, 1, 1, 1, 1]
    assert (x.sum(axis=1) == 1).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31 - 1))
def test_permute_preserves_structure(n, seed):
    rng = np.random.default_rng(seed)
    g = erdos_renyi(rng, n)
    perm = rng.permutation(n)
    h = g.permute(perm)
    np.testing.assert_array_equal(h.node_features, g.node_features[perm])
    np.testing.assert_array_equal(np.sort(h.degrees()), np.sort(g.degrees()))
    np.testing.assert_array_equal(h.degrees(), g.degrees()[perm])


def test_segment_index_sum_and_max():
    seg = SegmentIndex([2, 0, 2, 0], 4)
    v = np.array([[1.0], [5.0], [-3.0], [2.0]])
    assert seg.sum(v).ravel().tolist() == [7.0, 0.0, -2.0, 0.0]
    assert seg.max(v).ravel().tolist() == [5.0, 0.0, 1.0, 0.0]
