"""Fold training, cross-validation and the capacity / generalization probes."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import export_metrics, load_dataset, stratified_kfold
from .graph import batch_graphs
from .layers import MODEL_KINDS, Ugcn, UgcnConfig
from .optim import Adam

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A NaN/inf loss aborted training."""


@dataclass
class RunConfig:
    dataset: str = "."
    name: str = "MUTAG"
    model: str = "sugcn"
    hidden: int = 32
    blocks: int = 5
    heads: int = 4
    batch_size: int = 32
    dropout: float = 0.5
    lr: float = 0.001
    epochs: int = 500
    folds: int = 10
    seed: int = 0
    normalize_attention: bool = False
    skip: bool = True
    degree_cap: int = 136
    out: str | None = None

    def model_config(self) -> UgcnConfig:
        return UgcnConfig(model=self.model, hidden=self.hidden, num_blocks=self.blocks,
                          heads=self.heads, dropout=self.dropout,
                          normalize_attention=self.normalize_attention, skip=self.skip)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoldResult:
    epochs: list[dict] = field(default_factory=list)
    failed: bool = False
    error: str | None = None
    model: Ugcn | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"epochs": self.epochs, "failed": self.failed}
        if self.error:
            d["error"] = self.error
        return d


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _batches(graphs, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(len(graphs)) if rng is None else rng.permutation(len(graphs))
    for i in range(0, len(order), batch_size):
        yield [graphs[j] for j in order[i : i + batch_size]]


def evaluate(model: Ugcn, graphs, batch_size: int = 128) -> tuple[float, float]:
    """Eval-mode (loss, accuracy) over ``graphs``; mutates nothing."""
    total_loss = 0.0
    correct = 0
    for chunk in _batches(graphs, batch_size, None):
        batch = batch_graphs(chunk)
        logits = model.forward(batch, "eval")
        total_loss += ad.cross_entropy(logits, batch.labels).item() * len(chunk)
        correct += int(np.sum(logits.values.argmax(axis=1) == batch.labels))
    return total_loss / len(graphs), correct / len(graphs)


def _train_epoch(model, opt, graphs, batch_size, shuffle_rng, dropout_rng, where=""):
    losses, correct, seen = 0.0, 0, 0
    for bi, chunk in enumerate(_batches(graphs, batch_size, shuffle_rng)):
        batch = batch_graphs(chunk)
        if batch.num_nodes < 2:
            # train-mode BatchNorm needs two rows
            continue
        opt.zero_grad()
        logits = model.forward(batch, "train", dropout_rng)
        loss = ad.cross_entropy(logits, batch.labels)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at {where}, batch {bi}")
        ad.backward(loss)
        opt.step()
        losses += value * len(chunk)
        correct += int(np.sum(logits.values.argmax(axis=1) == batch.labels))
        seen += len(chunk)
    if seen == 0:
        raise ValueError("no training batch had the two nodes BatchNorm needs")
    return losses / seen, correct / seen


def train_fold(config: RunConfig, train_graphs, test_graphs, fold_seed: int,
               num_classes: int | None = None, fold: int = 0, progress=None) -> FoldResult:
    """Train one model from scratch and record per-epoch curves.

    Each epoch reshuffles the training set with an rng keyed on
    ``(fold_seed, fold, epoch)``; test accuracy is measured in eval mode.
    """
    train_graphs, test_graphs = list(train_graphs), list(test_graphs)
    if num_classes is None:
        num_classes = 1 + max(g.label for g in train_graphs + test_graphs)
    in_features = train_graphs[0].num_features
    model = Ugcn.build(config.model_config(), in_features, num_classes,
                       _rng(fold_seed, fold, 0))
    opt = Adam(model.parameters(), lr=config.lr)
    dropout_rng = _rng(fold_seed, fold, 2)
    result = FoldResult()
    for epoch in range(1, config.epochs + 1):
        shuffle_rng = _rng(fold_seed, fold, 1, epoch)
        try:
            train_loss, train_acc = _train_epoch(
                model, opt, train_graphs, config.batch_size, shuffle_rng, dropout_rng,
                where=f"fold {fold} epoch {epoch}",
            )
        except NumericalError as exc:
            result.failed = True
            result.error = str(exc)
            log.error("fold %d aborted: %s", fold, result.error)
            return result
        _, test_acc = evaluate(model, test_graphs) if test_graphs else (0.0, 0.0)
        result.epochs.append({"train_loss": train_loss, "train_acc": train_acc, "test_acc": test_acc})
        if progress is not None:
            progress(fold, epoch, result.epochs[-1])
    result.model = model
    return result


def summarize(folds: list[FoldResult]) -> dict:
    """Mean test accuracy across folds per epoch; report its maximum and the std there."""
    done = [f for f in folds if not f.failed and f.epochs]
    if not done:
        return {"mean_acc": 0.0, "std_acc": 0.0, "best_epoch": 1, "complete": False,
                "completed_folds": 0, "per_epoch_mean_acc": []}
    n_epochs = min(len(f.epochs) for f in done)
    acc = np.array([[e["test_acc"] for e in f.epochs[:n_epochs]] for f in done])
    mean = acc.mean(axis=0)
    best = int(np.argmax(mean))
    return {
        "mean_acc": float(mean[best]),
        "std_acc": float(acc[:, best].std()),
        "best_epoch": best + 1,
        "complete": len(done) == len(folds),
        "completed_folds": len(done),
        "per_epoch_mean_acc": mean.tolist(),
    }


def run_cv(config: RunConfig, graphs=None, num_classes: int | None = None, progress=None) -> dict:
    """k-fold cross-validation; returns (and optionally exports) the metrics document."""
    start = time.perf_counter()
    if graphs is None:
        graphs, meta = load_dataset(config.dataset, config.name, config.degree_cap)
        num_classes = meta.num_classes
    graphs = list(graphs)
    labels = np.array([g.label for g in graphs])
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    plan = stratified_kfold(labels, config.folds, config.seed)
    folds = []
    for i in range(plan.k):
        train_idx, test_idx = plan.split(i)
        log.info("fold %d/%d: %d train, %d test", i + 1, plan.k, len(train_idx), len(test_idx))
        folds.append(train_fold(config, [graphs[j] for j in train_idx],
                                [graphs[j] for j in test_idx], config.seed, num_classes,
                                fold=i, progress=progress))
    doc = {
        "config": config.to_dict(),
        "folds": [dict(f.to_dict(), fold=i) for i, f in enumerate(folds)],
        "summary": summarize(folds),
        "runtime_seconds": time.perf_counter() - start,
    }
    if config.out:
        export_metrics(doc, config.out)
    return doc


# ---------------------------------------------------------------------- probes

def _subset(n: int, ratio: float, seed: int) -> np.ndarray:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    k = max(1, int(round(ratio * n)))
    return np.sort(_rng(seed, 7).permutation(n)[:k])


def capacity_probe(config: RunConfig, ratios=(0.1, 0.3, 0.5, 0.7, 0.9), graphs=None,
                   models=MODEL_KINDS) -> dict:
    """Final training accuracy versus training-set fraction for each model.

    Every model uses two blocks without skip connection, hidden 32 and lr 0.005;
    other settings (epochs, batch size, seed) come from ``config``.
    """
    start = time.perf_counter()
    if graphs is None:
        graphs, meta = load_dataset(config.dataset, config.name, config.degree_cap)
        num_classes = meta.num_classes
    else:
        graphs = list(graphs)
        num_classes = 1 + max(g.label for g in graphs)
    rows = []
    for model in models:
        cfg = replace(config, model=model, blocks=2, skip=False, hidden=32, lr=0.005)
        for r in ratios:
            idx = _subset(len(graphs), r, config.seed)
            res = train_fold(cfg, [graphs[i] for i in idx], [], config.seed, num_classes)
            final = res.epochs[-1]["train_acc"] if res.epochs else 0.0
            if not res.failed:
                final = evaluate(res.model, [graphs[i] for i in idx])[1]
            rows.append({"model": model, "ratio": float(r), "num_graphs": int(len(idx)),
                         "final_train_acc": float(final), "failed": res.failed})
            log.info("capacity %s ratio %.2f: train acc %.4f", model, r, final)

    summary = {}
    for r in ratios:
        accs = {row["model"]: row["final_train_acc"] for row in rows if row["ratio"] == float(r)}
        if "sugcn" in accs and "gat" in accs:
            summary[f"sugcn_ge_gat@{r:g}"] = accs["sugcn"] >= accs["gat"]
    doc = {"config": dict(config.to_dict(), ratios=list(ratios), models=list(models)),
           "rows": rows, "summary": summary,
           "runtime_seconds": time.perf_counter() - start}
    if config.out:
        export_metrics(doc, config.out)
    return doc


def holdout_split(labels, val_fraction: float = 0.1, seed: int = 0):
    """Seeded stratified 90/10 split, returned as (train, validation) index arrays."""
    labels = np.asarray(labels)
    rng = _rng(seed, 90)
    val = []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        val.extend(idx[: max(1, int(round(val_fraction * len(idx))))].tolist())
    val = np.sort(np.array(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(labels)), val)
    return train, val


def generalization_probe(config: RunConfig, graphs=None, models=MODEL_KINDS,
                         last: int = 50) -> dict:
    """Per-epoch eval-mode train/validation losses and their gap for each model."""
    start = time.perf_counter()
    if graphs is None:
        graphs, meta = load_dataset(config.dataset, config.name, config.degree_cap)
        num_classes = meta.num_classes
    else:
        graphs = list(graphs)
        num_classes = 1 + max(g.label for g in graphs)
    train_idx, val_idx = holdout_split([g.label for g in graphs], 0.1, config.seed)
    train = [graphs[i] for i in train_idx]
    val = [graphs[i] for i in val_idx]
    out = {}
    for model_kind in models:
        cfg = replace(config, model=model_kind)
        curves = {"train_loss": [], "val_loss": []}
        model = Ugcn.build(cfg.model_config(), train[0].num_features, num_classes,
                           _rng(cfg.seed, 0, 0))
        opt = Adam(model.parameters(), lr=cfg.lr)
        dropout_rng = _rng(cfg.seed, 0, 2)
        failed = None
        for epoch in range(1, cfg.epochs + 1):
            try:
                _train_epoch(model, opt, train, cfg.batch_size, _rng(cfg.seed, 0, 1, epoch),
                             dropout_rng, where=f"{model_kind} epoch {epoch}")
            except NumericalError as exc:
                failed = str(exc)
                break
            curves["train_loss"].append(evaluate(model, train)[0])
            curves["val_loss"].append(evaluate(model, val)[0])
        gap = [v - t for t, v in zip(curves["train_loss"], curves["val_loss"])]
        tail = gap[-last:] if gap else [0.0]
        out[model_kind] = dict(curves, gap=gap, mean_gap_last=float(np.mean(tail)),
                               failed=failed is not None)
        if failed:
            out[model_kind]["error"] = failed
        log.info("gap %s: mean gap over last %d epochs %.4f", model_kind, last, np.mean(tail))

    summary = {f"mean_gap_last_{k}": v["mean_gap_last"] for k, v in out.items()}
    if "gcn" in out:
        for k in ("sugcn", "gugcn"):
            if k in out:
                summary[f"{k}_gap_le_gcn"] = out[k]["mean_gap_last"] <= out["gcn"]["mean_gap_last"]
    doc = {"config": dict(config.to_dict(), models=list(models), last_epochs=last,
                          train_size=len(train), val_size=len(val)),
           "models": out, "summary": summary,
           "runtime_seconds": time.perf_counter() - start}
    if config.out:
        export_metrics(doc, config.out)
    return doc
