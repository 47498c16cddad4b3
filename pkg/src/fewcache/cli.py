"""Command-line surface binding the library operations into experiment flows.

Every subcommand is a thin client of the core package: it loads the named
files, calls the corresponding library operation and prints its result.
Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr, results to stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np

from .core import FeatureMatrix, Hyperparams, build_cache, l2_normalize_rows, predict, predict_batch
from .datastore import (
    feature_bytes,
    read_cache,
    read_features,
    read_labels,
    read_manifest,
    write_cache,
    write_features,
)
from .errors import FewcacheError
from .finetune import FineTuneConfig, fine_tune
from .search import SearchGrid, grid_search, reduce_cache

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 5.5


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for
    # data errors, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated reals, got {text!r}"
        )
    if not values:
        raise argparse.ArgumentTypeError("grid must not be empty")
    return values


def _accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def _cmd_build(args) -> int:
    features = read_features(args.features)
    labels, file_classes = read_labels(args.labels)
    if file_classes != args.classes:
        raise FewcacheError(
            f"class count mismatch: label file declares {file_classes}, "
            f"--classes says {args.classes}"
        )
    cache = build_cache(features, labels, args.classes)
    write_cache(cache, args.out)
    return EXIT_OK


def _cmd_predict(args) -> int:
    cache = read_cache(args.cache)
    classifier = read_features(args.classifier)
    query = read_features(args.query)
    hp = Hyperparams(alpha=args.alpha, beta=args.beta)
    logits = predict(query, cache, classifier, hp)
    for i, score in enumerate(logits):
        print(f"class_{i} {score:.6f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cache = read_cache(args.cache)
    classifier = read_features(args.classifier)
    feats, labels, _ = read_manifest(args.test_manifest).load()
    hp = Hyperparams(alpha=args.alpha, beta=args.beta)
    scores = predict_batch(feats, cache, classifier, hp)
    print(f"{_accuracy(scores, labels):.4f}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cache = read_cache(args.cache)
    classifier = read_features(args.classifier)
    feats, labels, _ = read_manifest(args.train_manifest).load()
    cfg = FineTuneConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.wd,
        seed=args.seed,
    )
    hp = Hyperparams(alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA)
    tuned, log = fine_tune(cache, (feats, labels), classifier, hp, cfg)
    write_cache(tuned, args.out)
    sys.stdout.write(log.to_text())
    return EXIT_OK


def _cmd_search(args) -> int:
    cache = read_cache(args.cache)
    classifier = read_features(args.classifier)
    feats, labels, _ = read_manifest(args.val_manifest).load()
    grid = SearchGrid(alphas=args.alpha_grid, betas=args.beta_grid)
    result = grid_search(cache, classifier, (feats, labels), grid)
    sys.stdout.write(result.to_text())
    print(
        f"best alpha {result.best_alpha:g} beta {result.best_beta:g} "
        f"acc {result.best_accuracy:.4f}"
    )
    return EXIT_OK


def _cmd_reduce(args) -> int:
    cache = read_cache(args.cache)
    reduced = reduce_cache(cache, args.size, args.seed)
    write_cache(reduced, args.out)
    for i in range(args.trials):
        trial = reduced if i == 0 else reduce_cache(cache, args.size, args.seed + i)
        digest = hashlib.sha256(feature_bytes(trial.keys)).hexdigest()
        print(f"trial {i} seed {args.seed + i} checksum {digest[:16]}")
    return EXIT_OK


def _cmd_ensemble(args) -> int:
    blocks = [read_features(p) for p in args.text_embeddings]
    shape = (blocks[0].rows, blocks[0].cols)
    for path, block in zip(args.text_embeddings, blocks):
        if (block.rows, block.cols) != shape:
            raise FewcacheError(
                f"template shape mismatch: {path} is {block.rows}x{block.cols}, "
                f"expected {shape[0]}x{shape[1]}"
            )
    mean = np.mean([b.data for b in blocks], axis=0)
    classifier = FeatureMatrix(l2_normalize_rows(mean), normalized=True)
    write_features(classifier, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fewcache",
        description="Few-shot cache-model classifier over precomputed embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[], help="build a cache file from features and labels")
    p.add_argument("--features", required=True, help="feature file (TIPF)")
    p.add_argument("--labels", required=True, help="label file (TIPL)")
    p.add_argument("--classes", required=True, type=int, help="number of classes")
    p.add_argument("--out", required=True, help="output cache file (TIPC)")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("predict", help="print per-class logits for one query")
    p.add_argument("--cache", required=True)
    p.add_argument("--classifier", required=True, help="zero-shot classifier (TIPF)")
    p.add_argument("--query", required=True, help="single-row query feature file")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="top-1 accuracy over a test manifest")
    p.add_argument("--cache", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("finetune", help="optimize cache keys on a train manifest")
    p.add_argument("--cache", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("search", help="grid-search (alpha, beta) on a val manifest")
    p.add_argument("--cache", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--alpha-grid", required=True, type=_grid, help="comma-separated")
    p.add_argument("--beta-grid", required=True, type=_grid, help="comma-separated")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("reduce", help="shrink the cache to per-class prototypes")
    p.add_argument("--cache", required=True)
    p.add_argument("--size", required=True, type=int, help="prototypes per class")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser(
        "ensemble", help="average per-template text embeddings into a classifier"
    )
    p.add_argument(
        "--text-embeddings",
        required=True,
        nargs="+",
        help="one N x C feature file per template",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ensemble)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FewcacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # config-level rejections (negative alpha, bad epoch counts, ...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
