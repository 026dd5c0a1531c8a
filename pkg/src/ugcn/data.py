"""TU-format datasets, node features, stratified folds and metrics files."""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .graph import Graph, degree_features

DEFAULT_DEGREE_CAP = 136

# Published benchmark statistics: graphs, classes, average nodes, max nodes.
BENCHMARK_STATS = {
    "MUTAG": (188, 2, 17.9, 28),
    "PTC_MR": (344, 2, 25.5, 109),
    "PROTEINS": (1113, 2, 39.1, 620),
    "IMDB-BINARY": (1000, 2, 19.8, 136),
    "IMDB-MULTI": (1500, 3, 13.0, 89),
    "COLLAB": (5000, 3, 74.5, 492),
}


class DatasetError(ValueError):
    """Raised for missing or malformed dataset files."""


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    num_graphs: int
    num_classes: int
    avg_nodes: float
    max_nodes: int
    has_node_labels: bool
    label_values: tuple = ()


_TOKEN = re.compile(r"[,\s]+")


def _read_ints(path: Path, per_line: int | None = None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            toks = [t for t in _TOKEN.split(line) if t]
            try:
                vals = [int(t) for t in toks]
            except ValueError:
                try:
                    # some TU exports write integral labels as "1.0"
                    floats = [float(t) for t in toks]
                except ValueError:
                    raise DatasetError(f"{path.name}:{lineno}: non-integer token in {line!r}") from None
                if any(f != int(f) for f in floats):
                    raise DatasetError(f"{path.name}:{lineno}: non-integer token in {line!r}")
                vals = [int(f) for f in floats]
            if per_line is not None and len(vals) != per_line:
                raise DatasetError(f"{path.name}:{lineno}: expected {per_line} values, got {len(vals)}")
            rows.append(vals if per_line != 1 else vals[0])
    if per_line == 2:
        return np.array(rows, dtype=np.int64).reshape(-1, 2)
    return np.array(rows, dtype=np.int64)


def _dataset_file(directory: Path, name: str, suffix: str) -> Path | None:
    for base in (directory, directory / name, directory / name / "raw"):
        p = base / f"{name}_{suffix}.txt"
        if p.exists():
            return p
    return None


def parse_tu_dataset(directory, name: str) -> tuple[list[Graph], DatasetMeta]:
    """Read ``<name>_A.txt``, ``_graph_indicator.txt``, ``_graph_labels.txt``
    and the optional ``_node_labels.txt`` from ``directory`` (or
    ``directory/name``). Indices in the files are 1-based.
    """
    directory = Path(directory)
    files = {}
    for suffix in ("A", "graph_indicator", "graph_labels"):
        p = _dataset_file(directory, name, suffix)
        if p is None:
            raise DatasetError(f"missing {name}_{suffix}.txt under {directory}")
        files[suffix] = p
    node_label_path = _dataset_file(directory, name, "node_labels")

    edges = _read_ints(files["A"], per_line=2) - 1
    indicator = _read_ints(files["graph_indicator"], per_line=1) - 1
    raw_labels = _read_ints(files["graph_labels"], per_line=1)
    num_graphs = len(raw_labels)
    num_nodes_total = len(indicator)

    if num_nodes_total == 0 or num_graphs == 0:
        raise DatasetError("dataset has no nodes or no graphs")
    if indicator.min() < 0 or indicator.max() >= num_graphs:
        raise DatasetError("graph indicator references an unknown graph")
    if np.any(np.diff(indicator) < 0):
        raise DatasetError("graph indicator is not grouped by graph")
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes_total):
        raise DatasetError("edge references an unknown node")
    if len(edges) and np.any(indicator[edges[:, 0]] != indicator[edges[:, 1]]):
        bad = edges[indicator[edges[:, 0]] != indicator[edges[:, 1]]][0] + 1
        raise DatasetError(f"edge {tuple(bad.tolist())} crosses two graphs")

    node_labels = None
    if node_label_path is not None:
        node_labels = _read_ints(node_label_path, per_line=1)
        if len(node_labels) != num_nodes_total:
            raise DatasetError("node label count does not match the graph indicator")

    label_values = np.unique(raw_labels)
    labels = np.searchsorted(label_values, raw_labels)

    sizes = np.bincount(indicator, minlength=num_graphs)
    if np.any(sizes == 0):
        raise DatasetError(f"graph {int(np.flatnonzero(sizes == 0)[0]) + 1} has no nodes")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edge_graph = indicator[edges[:, 0]] if len(edges) else np.zeros(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    edge_bounds = np.searchsorted(edge_graph[order], np.arange(num_graphs + 1))

    graphs = []
    for gi in range(num_graphs):
        lo, hi = offsets[gi], offsets[gi + 1]
        e = edges[order[edge_bounds[gi] : edge_bounds[gi + 1]]] - lo
        nl = None if node_labels is None else node_labels[lo:hi]
        graphs.append(Graph(int(hi - lo), e, np.ones((hi - lo, 1)), int(labels[gi]), nl))

    meta = DatasetMeta(
        name=name,
        num_graphs=num_graphs,
        num_classes=len(label_values),
        avg_nodes=float(sizes.mean()),
        max_nodes=int(sizes.max()),
        has_node_labels=node_labels is not None,
        label_values=tuple(int(v) for v in label_values),
    )
    return graphs, meta


def build_features(graphs, meta: DatasetMeta | None = None,
                   max_degree_cap: int = DEFAULT_DEGREE_CAP) -> list[Graph]:
    """One-hot node labels when the dataset has them, else one-hot capped degree."""
    graphs = list(graphs)
    use_labels = (meta.has_node_labels if meta is not None
                  else all(g.node_labels is not None for g in graphs))
    if use_labels:
        values = np.unique(np.concatenate([g.node_labels for g in graphs]))
        out = []
        for g in graphs:
            x = np.zeros((g.num_nodes, len(values)))
            x[np.arange(g.num_nodes), np.searchsorted(values, g.node_labels)] = 1.0
            out.append(g.with_features(x))
        return out
    return [g.with_features(degree_features(g, max_degree_cap)) for g in graphs]


def load_dataset(directory, name: str, max_degree_cap: int = DEFAULT_DEGREE_CAP):
    graphs, meta = parse_tu_dataset(directory, name)
    return build_features(graphs, meta, max_degree_cap), meta


def write_tu_dataset(graphs, directory, name: str, node_labels: bool = True) -> Path:
    """Write graphs in TU layout (each undirected edge once per direction)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    a_lines, ind_lines, lab_lines, node_lines = [], [], [], []
    for gi, g in enumerate(graphs, 1):
        for p, q in g.edges:
            if p != q:
                a_lines.append(f"{p + offset + 1}, {q + offset + 1}")
        ind_lines += [str(gi)] * g.num_nodes
        lab_lines.append(str(g.label))
        if node_labels and g.node_labels is not None:
            node_lines += [str(int(v)) for v in g.node_labels]
        offset += g.num_nodes
    (directory / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text("\n".join(lab_lines) + "\n")
    if node_lines:
        (directory / f"{name}_node_labels.txt").write_text("\n".join(node_lines) + "\n")
    return directory


# ----------------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[np.ndarray, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(train indices, test indices) for fold ``i``."""
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test


def stratified_kfold(labels, k: int, seed: int = 0) -> FoldPlan:
    """Deal each shuffled class round-robin over the folds.

    The dealing continues where the previous class stopped, so fold sizes
    differ by at most one as well as per-class counts.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of graphs ({n})")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    start = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        for j, i in enumerate(idx):
            buckets[(start + j) % k].append(int(i))
        start = (start + len(idx)) % k
    return FoldPlan(tuple(np.sort(np.array(b, dtype=np.int64)) for b in buckets), seed)


# --------------------------------------------------------------------- metrics

_EPOCH = {
    "type": "object",
    "required": ["train_loss", "train_acc", "test_acc"],
    "properties": {
        "train_loss": {"type": "number"},
        "train_acc": {"type": "number", "minimum": 0, "maximum": 1},
        "test_acc": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

METRICS_SCHEMA = {
    "type": "object",
    "required": ["config", "folds", "summary", "runtime_seconds"],
    "properties": {
        "config": {"type": "object"},
        "folds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["epochs"],
                "properties": {"epochs": {"type": "array", "items": _EPOCH}},
            },
        },
        "summary": {
            "type": "object",
            "required": ["mean_acc", "std_acc", "best_epoch"],
            "properties": {
                "mean_acc": {"type": "number", "minimum": 0, "maximum": 1},
                "std_acc": {"type": "number", "minimum": 0},
                "best_epoch": {"type": "integer", "minimum": 1},
            },
        },
        "runtime_seconds": {"type": "number", "minimum": 0},
    },
}

CAPACITY_SCHEMA = {
    "type": "object",
    "required": ["config", "rows", "summary", "runtime_seconds"],
    "properties": {
        "config": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["model", "ratio", "num_graphs", "final_train_acc"],
                "properties": {
                    "model": {"type": "string"},
                    "ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "num_graphs": {"type": "integer", "minimum": 1},
                    "final_train_acc": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "summary": {"type": "object"},
        "runtime_seconds": {"type": "number", "minimum": 0},
    },
}

GAP_SCHEMA = {
    "type": "object",
    "required": ["config", "models", "summary", "runtime_seconds"],
    "properties": {
        "config": {"type": "object"},
        "models": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["train_loss", "val_loss", "gap", "mean_gap_last"],
                "properties": {
                    "train_loss": {"type": "array", "items": {"type": "number"}},
                    "val_loss": {"type": "array", "items": {"type": "number"}},
                    "gap": {"type": "array", "items": {"type": "number"}},
                    "mean_gap_last": {"type": "number"},
                },
            },
        },
        "summary": {"type": "object"},
        "runtime_seconds": {"type": "number", "minimum": 0},
    },
}

SCHEMAS = {"metrics": METRICS_SCHEMA, "capacity": CAPACITY_SCHEMA, "gap": GAP_SCHEMA}


def validate_metrics(doc: dict, kind: str = "metrics") -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match its schema."""
    jsonschema.validate(doc, SCHEMAS[kind])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def export_metrics(results: dict, path) -> None:
    """Write ``results`` as one indented JSON document."""
    path = Path(path)
    doc = _jsonable(results)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def load_metrics(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
