"""Command-line entry point: ``ugcn {train,verify,capacity,gap}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time

from .data import DatasetError
from .layers import MODEL_KINDS
from .train import RunConfig, capacity_probe, generalization_probe, run_cv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ugcn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ratios(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None
    if not vals or any(not 0.0 < v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("ratios must lie in (0, 1]")
    return vals


def _add_dataset_args(p, out_required=True):
    p.add_argument("--dataset", required=True, help="directory holding the TU files")
    p.add_argument("--name", required=True, help="dataset name, e.g. MUTAG")
    p.add_argument("--out", required=out_required, help="metrics JSON path")
    p.add_argument("--degree-cap", type=int, default=136)


def _add_model_args(p, model_default="sugcn"):
    p.add_argument("--model", choices=MODEL_KINDS, default=model_default)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--blocks", type=int, default=5)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-softmax", action="store_true",
                   help="use raw linear depthwise weights (the default for graph classification)")
    p.add_argument("--softmax", action="store_true",
                   help="normalize depthwise weights with LeakyReLU + neighborhood softmax")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ugcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="k-fold cross-validated training")
    _add_dataset_args(p)
    _add_model_args(p)
    p.add_argument("--folds", type=int, default=10)

    p = sub.add_parser("verify", help="run the DSConv equivalence checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("capacity", help="final train accuracy versus training-set fraction")
    _add_dataset_args(p)
    _add_model_args(p)
    p.add_argument("--ratios", type=_ratios, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--models", default=",".join(MODEL_KINDS))

    p = sub.add_parser("gap", help="train/validation loss gap per epoch")
    _add_dataset_args(p)
    _add_model_args(p)
    p.add_argument("--models", default=",".join(MODEL_KINDS))
    p.add_argument("--last", type=int, default=50, help="epochs averaged for the reported gap")
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        dataset=args.dataset, name=args.name, model=args.model, hidden=args.hidden,
        blocks=args.blocks, heads=args.heads, batch_size=args.batch_size,
        dropout=args.dropout, lr=args.lr, epochs=args.epochs,
        folds=getattr(args, "folds", 10), seed=args.seed,
        normalize_attention=args.softmax and not args.no_softmax,
        degree_cap=args.degree_cap, out=args.out,
    )


def _models(text: str, parser) -> tuple[str, ...]:
    models = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in models if m not in MODEL_KINDS]
    if bad or not models:
        parser.error(f"unknown model(s) {bad}; choose from {MODEL_KINDS}")
    return models


def _cmd_verify(args) -> int:
    from .oracle import run_suite

    start = time.perf_counter()
    results = run_suite(trials=args.trials, seed=args.seed)
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status}  {r['name']:<28} max deviation {r['max_deviation']:.3e} "
              f"(required {r['direction']} {r['tolerance']:.0e})")
    print(f"{len(results)} checks in {time.perf_counter() - start:.2f}s")
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_NUMERIC


def _cmd_train(args) -> int:
    cfg = _config(args)
    doc = run_cv(cfg)
    s = doc["summary"]
    print(f"{cfg.name} {cfg.model}: mean acc {s['mean_acc']:.4f} ± {s['std_acc']:.4f} "
          f"at epoch {s['best_epoch']} ({s['completed_folds']}/{cfg.folds} folds, "
          f"{doc['runtime_seconds']:.1f}s) -> {cfg.out}")
    return EXIT_OK if s["complete"] else EXIT_NUMERIC


def _cmd_capacity(args, parser) -> int:
    cfg = _config(args)
    doc = capacity_probe(cfg, args.ratios, models=_models(args.models, parser))
    for row in doc["rows"]:
        print(f"{row['model']:<6} ratio {row['ratio']:.2f} ({row['num_graphs']} graphs): "
              f"final train acc {row['final_train_acc']:.4f}")
    return EXIT_NUMERIC if any(r["failed"] for r in doc["rows"]) else EXIT_OK


def _cmd_gap(args, parser) -> int:
    cfg = _config(args)
    doc = generalization_probe(cfg, models=_models(args.models, parser), last=args.last)
    for name, m in doc["models"].items():
        print(f"{name:<6} mean gap (last {args.last} epochs): {m['mean_gap_last']:.4f}")
    return EXIT_NUMERIC if any(m["failed"] for m in doc["models"].values()) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "capacity":
            return _cmd_capacity(args, parser)
        if args.command == "gap":
            return _cmd_gap(args, parser)
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
