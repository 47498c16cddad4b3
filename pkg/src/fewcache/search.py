"""Hyperparameter grid search and cache-size reduction by prototype averaging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .core import CacheModel, FeatureMatrix, Hyperparams, LabelMatrix, build_cache
from .errors import (
    DimensionMismatchError,
    EmptyCacheError,
    FewcacheError,
    LabelRangeError,
)

Evaluator = Callable[[CacheModel], float]


@dataclass(frozen=True)
class SearchGrid:
    """Candidate residual ratios (alphas) and sharpness ratios (betas)."""

    alphas: Tuple[float, ...]
    betas: Tuple[float, ...]

    def __post_init__(self):
        for name, vals in (("alphas", self.alphas), ("betas", self.betas)):
            vals = tuple(float(v) for v in vals)
            if not vals:
                raise FewcacheError(f"empty grid: {name} has no values")
            if any(not np.isfinite(v) or v < 0.0 for v in vals):
                raise FewcacheError(f"{name} must all be finite and >= 0")
            object.__setattr__(self, name, vals)


@dataclass(frozen=True)
class SearchResult:
    """Accuracy at every grid cell plus the winning (alpha, beta).

    Ties are broken towards the smallest alpha, then the smallest beta, so
    repeated searches are reproducible.
    """

    alphas: Tuple[float, ...]
    betas: Tuple[float, ...]
    table: np.ndarray  # (len(alphas), len(betas)) accuracies
    best_alpha: float
    best_beta: float
    best_accuracy: float

    def to_text(self) -> str:
        lines = []
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                lines.append(f"alpha {a:g} beta {b:g} acc {self.table[i, j]:.4f}")
        return "\n".join(lines) + "\n"


def grid_search(
    cache: CacheModel,
    classifier: FeatureMatrix,
    val: Tuple[FeatureMatrix, Sequence[int]],
    grid: SearchGrid,
) -> SearchResult:
    """Exhaustively score every (alpha, beta) cell by top-1 accuracy.

    Per-query similarities and zero-shot scores are computed once and reused
    across cells; each cell's logits match predict_batch bit for bit because
    the same per-row kernels are applied in the same order.
    """
    feats, labels = val
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if feats.rows == 0:
        raise FewcacheError("validation set is empty")
    if idx.size != feats.rows:
        raise DimensionMismatchError(
            f"{feats.rows} validation rows but {idx.size} labels"
        )
    if cache.size == 0:
        raise EmptyCacheError("empty cache")
    if feats.cols != cache.dim or classifier.cols != feats.cols:
        raise DimensionMismatchError("validation/cache/classifier dims disagree")
    if classifier.rows != cache.num_classes:
        raise DimensionMismatchError(
            f"classifier has {classifier.rows} rows but cache encodes "
            f"{cache.num_classes} classes"
        )
    if idx.min() < 0 or idx.max() >= cache.num_classes:
        raise LabelRangeError("validation label out of range")

    raw = [cache.keys.data @ q for q in feats.data]
    zs = [classifier.data @ q for q in feats.data]

    table = np.zeros((len(grid.alphas), len(grid.betas)), dtype=np.float64)
    for j, beta in enumerate(grid.betas):
        cache_terms = [
            np.exp(-beta * (1.0 - np.clip(r, -1.0, 1.0))) @ cache.values.data
            for r in raw
        ]
        for i, alpha in enumerate(grid.alphas):
            correct = 0
            for m in range(feats.rows):
                logits = alpha * cache_terms[m] + zs[m]
                correct += int(np.argmax(logits) == idx[m])
            table[i, j] = correct / feats.rows

    best_i, best_j = 0, 0
    for i, a in enumerate(grid.alphas):
        for j, b in enumerate(grid.betas):
            better = table[i, j] > table[best_i, best_j]
            tie = table[i, j] == table[best_i, best_j]
            smaller = (a, b) < (grid.alphas[best_i], grid.betas[best_j])
            if better or (tie and smaller):
                best_i, best_j = i, j
    return SearchResult(
        alphas=grid.alphas,
        betas=grid.betas,
        table=table,
        best_alpha=grid.alphas[best_i],
        best_beta=grid.betas[best_j],
        best_accuracy=float(table[best_i, best_j]),
    )


def reduce_cache(cache: CacheModel, target_per_class: int, seed: int) -> CacheModel:
    """Shrink the cache to target_per_class prototypes per class.

    Each class's keys are partitioned into uniform random groups (seeded) and
    every group is averaged into one L2-renormalized prototype. Output rows
    are class-major, group-ascending. Groups of size 1 copy the key verbatim
    so the per-class key multiset is preserved exactly.
    """
    if cache.size == 0:
        raise EmptyCacheError("empty cache")
    if target_per_class < 1:
        raise FewcacheError("target_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    class_idx = cache.values.class_indices()

    protos: List[np.ndarray] = []
    labels: List[int] = []
    for c in range(cache.num_classes):
        rows = np.nonzero(class_idx == c)[0]
        if target_per_class > rows.size:
            raise FewcacheError(
                f"class {c} has {rows.size} rows, cannot keep {target_per_class}"
            )
        if rows.size % target_per_class != 0:
            raise FewcacheError(
                f"class {c}: {rows.size} rows not divisible into "
                f"{target_per_class} uniform groups"
            )
        group_size = rows.size // target_per_class
        shuffled = rows[rng.permutation(rows.size)]
        for g in range(target_per_class):
            members = shuffled[g * group_size : (g + 1) * group_size]
            if group_size == 1:
                protos.append(cache.keys.data[members[0]])
            else:
                mean = cache.keys.data[members].mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm == 0.0:
                    raise FewcacheError(
                        f"class {c} group {g}: averaged prototype is the zero vector"
                    )
                protos.append(mean / norm)
            labels.append(c)

    keys = FeatureMatrix(np.stack(protos), normalized=True)
    values = LabelMatrix.from_indices(labels, cache.num_classes)
    return CacheModel(
        keys=keys,
        values=values,
        num_classes=cache.num_classes,
        shots=target_per_class,
    )


def reduce_trials(
    cache: CacheModel,
    target_per_class: int,
    trials: int,
    evaluator: Evaluator,
    seed: int = 0,
) -> Tuple[float, List[float]]:
    """Repeat reduce_cache with seeds seed..seed+trials-1 and average.

    Returns (mean accuracy, per-trial accuracies).
    """
    if trials < 1:
        raise FewcacheError("trials must be >= 1")
    accs = [
        float(evaluator(reduce_cache(cache, target_per_class, seed + i)))
        for i in range(trials)
    ]
    return sum(accs) / trials, accs


def compress_shots(
    features: FeatureMatrix,
    labels: Sequence[int],
    shots_per_class: int,
    cache_limit: int,
    seed: int,
) -> CacheModel:
    """Cache more shots than the size budget by averaging them into prototypes.

    Builds the full cache from a class-balanced shots_per_class set, then
    reduces every class to cache_limit prototypes (e.g. 64 shots with limit
    16 averages groups of 4).
    """
    if cache_limit < 1:
        raise FewcacheError("cache_limit must be >= 1")
    if cache_limit > shots_per_class:
        raise FewcacheError(
            f"cache_limit {cache_limit} exceeds shots_per_class {shots_per_class}"
        )
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise FewcacheError("empty training set")
    num_classes = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=num_classes)
    if not np.all(counts == shots_per_class):
        raise FewcacheError(
            f"expected exactly {shots_per_class} rows per class, "
            f"got counts {counts.tolist()}"
        )
    full = build_cache(features, idx, num_classes)
    return reduce_cache(full, cache_limit, seed)
