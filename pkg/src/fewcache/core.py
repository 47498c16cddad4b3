"""Cache-model data types and the training-free inference path.

A cache model pairs L2-normalized embedding rows (keys) with one-hot label
rows (values). A query is classified by exponential affinities to the keys,
which weight the cached values, blended with a zero-shot linear classifier
through a residual ratio.

All operations here are pure functions over immutable inputs and are safe to
call concurrently. Arrays are stored read-only in double precision; file
formats keep single precision (see datastore).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyCacheError,
    LabelRangeError,
    NormalizationError,
)

# Unit-norm slack; chosen to survive float32 export round-trips.
NORM_TOLERANCE = 1e-4

# Per-class scores, shape (num_classes,), float64.
Logits = np.ndarray


def _frozen_f64(data) -> np.ndarray:
    out = np.array(data, dtype=np.float64, order="C")
    out.setflags(write=False)
    return out


def l2_normalize_rows(data: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm. Raises on a zero row."""
    data = np.asarray(data, dtype=np.float64)
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise NormalizationError("cannot normalize a zero row")
    return data / norms


@dataclass(frozen=True)
class FeatureMatrix:
    """Row-major matrix of embedding row vectors in cosine space.

    When ``normalized`` is set (keys, classifier weights and queries always
    are), every row must have unit L2 norm within NORM_TOLERANCE. Zero rows
    are permitted only for degenerate query batches.
    """

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        data = _frozen_f64(self.data)
        if data.ndim != 2:
            raise DimensionMismatchError(
                f"feature matrix must be 2-D, got {data.ndim}-D"
            )
        if data.shape[1] < 1:
            raise DimensionMismatchError("feature matrix needs at least one column")
        if not np.all(np.isfinite(data)):
            raise NormalizationError("feature matrix contains non-finite entries")
        if self.normalized and data.shape[0] > 0:
            norms = np.linalg.norm(data, axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > NORM_TOLERANCE:
                raise NormalizationError(
                    f"row norm deviates from 1.0 by {worst:.3e} (> {NORM_TOLERANCE:g})"
                )
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelMatrix:
    """One-hot label rows: each row selects exactly one of ``classes``."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen_f64(self.data)
        if data.ndim != 2 or data.shape[1] < 1:
            raise DimensionMismatchError("label matrix must be 2-D with >= 1 class")
        if not np.all((data == 0.0) | (data == 1.0)):
            raise LabelRangeError("label matrix entries must be exactly 0 or 1")
        if data.shape[0] > 0 and not np.all(data.sum(axis=1) == 1.0):
            raise LabelRangeError("each label row must sum to exactly 1")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_indices(cls, labels: Sequence[int], num_classes: int) -> "LabelMatrix":
        idx = np.asarray(labels, dtype=np.int64).reshape(-1)
        if num_classes < 1:
            raise LabelRangeError("num_classes must be >= 1")
        if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
            raise LabelRangeError(
                f"label out of range: found index outside [0, {num_classes})"
            )
        data = np.zeros((idx.size, num_classes), dtype=np.float64)
        data[np.arange(idx.size), idx] = 1.0
        return cls(data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def classes(self) -> int:
        return self.data.shape[1]

    def class_indices(self) -> np.ndarray:
        return np.argmax(self.data, axis=1)


@dataclass(frozen=True)
class CacheModel:
    """Paired keys (NK x C) and one-hot values (NK x N) plus shot metadata.

    ``shots`` records the nominal per-class count K; it is 0 when rows are
    not uniform across classes (allowed after reduction or for imbalanced
    user data). Per-class counts stay derivable from the values.
    """

    keys: FeatureMatrix
    values: LabelMatrix
    num_classes: int
    shots: int

    def __post_init__(self):
        if self.keys.rows != self.values.rows:
            raise DimensionMismatchError(
                f"cache keys have {self.keys.rows} rows but values have "
                f"{self.values.rows}"
            )
        if self.values.classes != self.num_classes:
            raise DimensionMismatchError(
                f"values encode {self.values.classes} classes, expected "
                f"{self.num_classes}"
            )

    @property
    def size(self) -> int:
        return self.keys.rows

    @property
    def dim(self) -> int:
        return self.keys.cols

    def per_class_counts(self) -> np.ndarray:
        return self.values.data.sum(axis=0).astype(np.int64)


@dataclass(frozen=True)
class Hyperparams:
    """Residual ratio alpha and sharpness ratio beta, both finite and >= 0."""

    alpha: float = 1.0
    beta: float = 5.5

    def __post_init__(self):
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            value = float(value)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)


def build_cache(
    features: FeatureMatrix, labels: Sequence[int], num_classes: int
) -> CacheModel:
    """Assemble a cache model from normalized features and class indices.

    Keys are the feature rows in their given order; values are the one-hot
    expansion of ``labels``. The nominal shot count is the uniform per-class
    row count, or 0 when classes are imbalanced.
    """
    if not features.normalized:
        raise NormalizationError("cache keys must be flagged normalized")
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.size != features.rows:
        raise DimensionMismatchError(
            f"{features.rows} feature rows but {idx.size} labels"
        )
    values = LabelMatrix.from_indices(idx, num_classes)
    counts = values.data.sum(axis=0)
    uniform = counts.size > 0 and np.all(counts == counts[0]) and counts[0] > 0
    shots = int(counts[0]) if uniform else 0
    return CacheModel(keys=features, values=values, num_classes=num_classes, shots=shots)


def activation_phi(x, beta: float):
    """exp(-beta * (1 - x)): affinity activation, strictly increasing for beta > 0.

    Maps cosine similarity x in [0, 1] to (0, 1] with phi(1) = 1; inputs
    outside [0, 1] are accepted and extrapolate the same expression.
    """
    return np.exp(-beta * (1.0 - np.asarray(x, dtype=np.float64)))


def _clamped_similarities(keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    # Clamp guards against unit-norm rounding pushing cosines past +/-1,
    # keeping affinities inside (0, 1].
    return np.clip(keys @ query, -1.0, 1.0)


def _query_vector(query: FeatureMatrix) -> np.ndarray:
    if query.rows != 1:
        raise DimensionMismatchError(
            f"query must have exactly one row, got {query.rows}"
        )
    return query.data[0]


def compute_affinities(
    query: FeatureMatrix, keys: FeatureMatrix, beta: float
) -> np.ndarray:
    """Affinity of a 1xC query to every key row: phi of clamped cosines."""
    q = _query_vector(query)
    if keys.cols != query.cols:
        raise DimensionMismatchError(
            f"query dim {query.cols} != key dim {keys.cols}"
        )
    return np.exp(-beta * (1.0 - _clamped_similarities(keys.data, q)))


def _check_predict_dims(
    query: FeatureMatrix, cache: CacheModel, classifier: FeatureMatrix
) -> None:
    if cache.size == 0:
        raise EmptyCacheError("empty cache")
    if query.cols != cache.dim:
        raise DimensionMismatchError(
            f"query dim {query.cols} != cache key dim {cache.dim}"
        )
    if classifier.cols != query.cols:
        raise DimensionMismatchError(
            f"classifier dim {classifier.cols} != query dim {query.cols}"
        )
    if classifier.rows != cache.num_classes:
        raise DimensionMismatchError(
            f"classifier has {classifier.rows} rows but cache encodes "
            f"{cache.num_classes} classes"
        )


def _predict_row(
    q: np.ndarray, cache: CacheModel, classifier: FeatureMatrix, hp: Hyperparams
) -> np.ndarray:
    # Two cascaded matrix-vector products; the batch path reuses this exact
    # per-row kernel so the reduction order never diverges.
    affinities = np.exp(
        -hp.beta * (1.0 - _clamped_similarities(cache.keys.data, q))
    )
    return hp.alpha * (affinities @ cache.values.data) + classifier.data @ q


def predict(
    query: FeatureMatrix,
    cache: CacheModel,
    classifier: FeatureMatrix,
    hp: Hyperparams,
) -> Logits:
    """Blend cache retrieval with the zero-shot classifier.

    logits = alpha * (affinities @ values) + query @ classifier^T, where
    affinities are phi of the clamped query/key cosines. With alpha = 0 this
    reduces to the zero-shot path exactly.
    """
    _check_predict_dims(query, cache, classifier)
    return _predict_row(_query_vector(query), cache, classifier, hp)


def predict_multimodal(
    query: FeatureMatrix,
    visual_cache: CacheModel,
    textual_keys: FeatureMatrix,
    hp: Hyperparams,
) -> Logits:
    """Retrieval framing over both caches: visual keys/values plus textual keys.

    The textual cache's values are implicitly the N x N identity, so its
    retrieval term collapses to query @ textual_keys^T; numerically this is
    the same expression as predict with classifier = textual_keys.
    """
    _check_predict_dims(query, visual_cache, textual_keys)
    q = _query_vector(query)
    affinities = np.exp(
        -hp.beta * (1.0 - _clamped_similarities(visual_cache.keys.data, q))
    )
    visual_term = affinities @ visual_cache.values.data
    textual_term = textual_keys.data @ q  # identity values: retrieval == projection
    return hp.alpha * visual_term + textual_term


def predict_batch(
    queries: FeatureMatrix,
    cache: CacheModel,
    classifier: FeatureMatrix,
    hp: Hyperparams,
) -> np.ndarray:
    """Score M queries; row m is bitwise identical to predict on query m.

    Rows are independent, so the loop may be parallelized as long as each
    row keeps the per-row kernel's reduction order.
    """
    if cache.size == 0:
        raise EmptyCacheError("empty cache")
    if queries.cols != cache.dim or classifier.cols != queries.cols:
        raise DimensionMismatchError(
            f"query dim {queries.cols}, cache dim {cache.dim}, "
            f"classifier dim {classifier.cols} must agree"
        )
    if classifier.rows != cache.num_classes:
        raise DimensionMismatchError(
            f"classifier has {classifier.rows} rows but cache encodes "
            f"{cache.num_classes} classes"
        )
    if queries.rows == 0:
        return np.zeros((0, cache.num_classes), dtype=np.float64)
    return np.stack(
        [_predict_row(q, cache, classifier, hp) for q in queries.data]
    )
