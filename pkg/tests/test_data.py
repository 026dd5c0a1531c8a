import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ugcn.data import (
    DatasetError, build_features, export_metrics, load_dataset, load_metrics, parse_tu_dataset,
    stratified_kfold, validate_metrics, write_tu_dataset,
)

from _factories import rings_and_trees


def write(tmp_path, name, **files):
    for suffix, text in files.items():
        (tmp_path / f"{name}_{suffix}.txt").write_text(text)


@pytest.fixture
def tiny(tmp_path):
    # graph 1: triangle (nodes 1-3); graph 2: single edge (nodes 4-5)
    write(tmp_path, "TINY",
          A="1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
          graph_indicator="1\n1\n1\n2\n2\n",
          graph_labels="-1\n1\n",
          node_labels="0\n2\n2\n1\n0\n")
    return tmp_path


def test_parse_hand_built_dataset(tiny):
    graphs, meta = parse_tu_dataset(tiny, "TINY")
    assert (meta.num_graphs, meta.num_classes, meta.max_nodes) == (2, 2, 3)
    assert meta.avg_nodes == 2.5 and meta.label_values == (-1, 1)
    assert [g.label for g in graphs] == [0, 1]
    assert graphs[0].edges.tolist() == [[0, 1], [0, 2], [1, 0], [1, 2], [2, 0], [2, 1]]
    assert graphs[1].edges.tolist() == [[0, 1], [1, 0]]
    assert graphs[1].node_labels.tolist() == [1, 0]


def test_node_labels_become_one_hot(tiny):
    graphs, _ = load_dataset(tiny, "TINY")
    assert graphs[0].node_features.tolist() == [[1, 0, 0], [0, 0, 1], [0, 0, 1]]


def test_degree_features_when_node_labels_missing(tiny):
    (tiny / "TINY_node_labels.txt").unlink()
    graphs, meta = load_dataset(tiny, "TINY", max_degree_cap=1)
    assert not meta.has_node_labels
    assert graphs[0].node_features.tolist() == [[0, 1]] * 3


def test_dataset_in_named_subdirectory(tiny, tmp_path):
    sub = tmp_path / "nested"
    write_tu_dataset(parse_tu_dataset(tiny, "TINY")[0], sub / "TINY", "TINY")
    assert parse_tu_dataset(sub, "TINY")[1].num_graphs == 2


@pytest.mark.parametrize("suffix,text,message", [
    ("A", "1, 4\n", "crosses"),
    ("A", "1, 9\n", "unknown node"),
    ("A", "1 2 3\n", "expected 2 values"),
    ("graph_labels", "x\n1\n", "non-integer"),
    ("graph_indicator", "1\n1\n3\n2\n2\n", "unknown graph"),
    ("graph_indicator", "1\n2\n1\n2\n2\n", "grouped"),
    ("node_labels", "0\n", "node label count"),
])
def test_malformed_files_raise(tiny, suffix, text, message):
    (tiny / f"TINY_{suffix}.txt").write_text(text)
    with pytest.raises(DatasetError, match=message):
        parse_tu_dataset(tiny, "TINY")


def test_missing_files_raise(tmp_path):
    with pytest.raises(DatasetError, match="missing"):
        parse_tu_dataset(tmp_path, "NOPE")


def test_write_then_parse_round_trip(tmp_path):
    graphs = rings_and_trees(12)
    write_tu_dataset(graphs, tmp_path, "RT")
    back, meta = parse_tu_dataset(tmp_path, "RT")
    assert meta.num_graphs == 12
    for a, b in zip(graphs, back):
        assert a.label == b.label
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.node_labels, b.node_labels)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=10, max_size=80), st.integers(2, 10),
       st.integers(0, 1000))
def test_stratified_folds_partition_and_balance(labels, k, seed):
    labels = np.array(labels)
    k = min(k, len(labels))
    plan = stratified_kfold(labels, k, seed)
    everything = np.sort(np.concatenate(plan.folds))
    np.testing.assert_array_equal(everything, np.arange(len(labels)))
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    for cls in np.unique(labels):
        per = [int((labels[f] == cls).sum()) for f in plan.folds]
        assert max(per) - min(per) <= 1
    train, test = plan.split(0)
    assert not set(train) & set(test)
    np.testing.assert_array_equal(stratified_kfold(labels, k, seed).folds[0], plan.folds[0])


def test_kfold_rejects_bad_k():
    with pytest.raises(ValueError):
        stratified_kfold([0, 1, 0], 1)
    with pytest.raises(ValueError):
        stratified_kfold([0, 1, 0], 4)


def _metrics_doc():
    return {"config": {"seed": np.int64(3)},
            "folds": [{"epochs": [{"train_loss": np.float64(0.5), "train_acc": 1.0,
                                   "test_acc": 0.5}]}],
            "summary": {"mean_acc": 0.5, "std_acc": 0.0, "best_epoch": 1},
            "runtime_seconds": 1.0}


def test_metrics_round_trip(tmp_path):
    path = tmp_path / "out" / "m.json"
    export_metrics(_metrics_doc(), path)
    doc = load_metrics(path)
    validate_metrics(doc)
    assert doc["config"]["seed"] == 3


def test_metrics_schema_rejects_bad_accuracy():
    doc = _metrics_doc()
    doc["summary"]["mean_acc"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        validate_metrics(doc)
