"""Cache-key fine-tuning with closed-form gradients.

Keys start from the cached features and are optimized by minimizing softmax
cross-entropy over the few-shot training set; values and the zero-shot
classifier stay frozen. The gradient of the loss with respect to each key
row has a closed form, so no autodiff framework is involved.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .core import (
    CacheModel,
    FeatureMatrix,
    Hyperparams,
    Logits,
    _check_predict_dims,
    _query_vector,
    l2_normalize_rows,
    NORM_TOLERANCE,
)
from .errors import FewcacheError, LabelRangeError, NormalizationError

_OPTIMIZERS = ("adamw", "sgd")


@dataclass(frozen=True)
class FineTuneConfig:
    """Optimizer and schedule settings for key fine-tuning.

    Defaults follow the common recipe: 20 epochs, batch 256, learning rate
    1e-3, decoupled weight decay 0.01, adaptive moments 0.9/0.999 with
    epsilon 1e-8, cosine decay of the learning rate to zero.
    """

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    renormalize_keys: bool = False
    optimizer: str = "adamw"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {_OPTIMIZERS}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass(frozen=True)
class TrainLog:
    """Per-epoch loss/accuracy plus a checksum of the final key matrix."""

    epochs: Tuple[EpochStats, ...]
    key_checksum: str

    def to_text(self) -> str:
        return "".join(
            f"epoch {e.epoch} loss {e.loss:.6f} acc {e.accuracy:.4f}\n"
            for e in self.epochs
        )


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr at step 0 towards 0 at step total_steps."""
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def softmax(logits: Logits) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(logits: Logits, target: int) -> float:
    """Cross-entropy -log softmax(logits)[target], max-subtraction stabilized."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= target < z.size:
        raise LabelRangeError(f"target {target} out of range for {z.size} classes")
    shifted = z - np.max(z)
    return float(np.log(np.sum(np.exp(shifted))) - shifted[target])


def key_gradient(
    query: FeatureMatrix,
    cache: CacheModel,
    classifier: FeatureMatrix,
    hp: Hyperparams,
    target: int,
) -> np.ndarray:
    """Gradient of ce_loss(predict(query), target) with respect to the keys.

    Row i is alpha * beta * A_i * (p[c_i] - y[c_i]) * query, where p is the
    softmax of the logits and c_i the class of cache row i. Values,
    classifier and query receive no gradient. Rows whose raw cosine falls
    outside [-1, 1] get zero: the similarity clamp is flat there.
    """
    _check_predict_dims(query, cache, classifier)
    if not 0 <= target < cache.num_classes:
        raise LabelRangeError(
            f"target {target} out of range for {cache.num_classes} classes"
        )
    q = _query_vector(query)
    raw = cache.keys.data @ q
    sims = np.clip(raw, -1.0, 1.0)
    affinities = np.exp(-hp.beta * (1.0 - sims))
    logits = hp.alpha * (affinities @ cache.values.data) + classifier.data @ q
    p = softmax(logits)
    y = np.zeros(cache.num_classes)
    y[target] = 1.0
    per_row = cache.values.data @ (p - y)  # (p - y)[c_i] for each cache row
    mask = (raw >= -1.0) & (raw <= 1.0)
    coeff = hp.alpha * hp.beta * affinities * per_row * mask
    return np.outer(coeff, q)


def _batch_forward_backward(
    keys: np.ndarray,
    values: np.ndarray,
    batch_feats: np.ndarray,
    batch_onehot: np.ndarray,
    classifier: np.ndarray,
    hp: Hyperparams,
):
    """Mean loss, correct count and mean key gradient for one mini-batch.

    Per-sample gradients are reduced in index-ascending order (the matrix
    product below is exactly that fixed-order sum).
    """
    raw = batch_feats @ keys.T
    sims = np.clip(raw, -1.0, 1.0)
    affinities = np.exp(-hp.beta * (1.0 - sims))
    logits = hp.alpha * (affinities @ values) + batch_feats @ classifier.T

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - (shifted * batch_onehot).sum(axis=1)
    correct = int(np.sum(np.argmax(logits, axis=1) == np.argmax(batch_onehot, axis=1)))

    p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    per_row = (p - batch_onehot) @ values.T  # (B, NK)
    mask = (raw >= -1.0) & (raw <= 1.0)
    coeff = hp.alpha * hp.beta * affinities * per_row * mask
    grad = coeff.T @ batch_feats / batch_feats.shape[0]
    return float(losses.sum()), correct, grad


def fine_tune(
    cache: CacheModel,
    train: Tuple[FeatureMatrix, Sequence[int]],
    classifier: FeatureMatrix,
    hp: Hyperparams,
    cfg: FineTuneConfig,
) -> Tuple[CacheModel, TrainLog]:
    """Optimize the cache keys on a labeled training set.

    Returns a new cache whose keys are the optimized parameters; the values
    matrix is reused untouched. Deterministic given cfg.seed; with
    cfg.epochs = 0 or cfg.learning_rate = 0 the keys come back bit-identical.
    """
    feats, labels = train
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if feats.rows == 0:
        raise FewcacheError("empty training set")
    if not feats.normalized:
        raise NormalizationError("training features must be flagged normalized")
    if idx.size != feats.rows:
        raise FewcacheError(
            f"{feats.rows} training rows but {idx.size} labels"
        )
    if idx.min() < 0 or idx.max() >= cache.num_classes:
        raise LabelRangeError("training label out of range")
    _check_predict_dims(
        FeatureMatrix(feats.data[:1], normalized=feats.normalized), cache, classifier
    )

    n = feats.rows
    keys = np.array(cache.keys.data, dtype=np.float64)  # writable working copy
    values = cache.values.data
    w = classifier.data
    onehot = np.zeros((n, cache.num_classes), dtype=np.float64)
    onehot[np.arange(n), idx] = 1.0

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)

    m = np.zeros_like(keys)
    v = np.zeros_like(keys)
    t = 0
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        correct_sum = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, correct, grad = _batch_forward_backward(
                keys, values, feats.data[batch], onehot[batch], w, hp
            )
            loss_sum += loss
            correct_sum += correct

            lr = cosine_lr(cfg.learning_rate, step, total_steps)
            step += 1
            if cfg.optimizer == "adamw":
                t += 1
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
                m_hat = m / (1.0 - cfg.beta1**t)
                v_hat = v / (1.0 - cfg.beta2**t)
                keys *= 1.0 - lr * cfg.weight_decay
                keys -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            else:  # sgd, decoupled decay
                keys *= 1.0 - lr * cfg.weight_decay
                keys -= lr * grad
            if cfg.renormalize_keys:
                keys = l2_normalize_rows(keys)
        history.append(
            EpochStats(epoch=epoch + 1, loss=loss_sum / n, accuracy=correct_sum / n)
        )

    checksum = hashlib.sha256(np.ascontiguousarray(keys).tobytes()).hexdigest()
    norms = np.linalg.norm(keys, axis=1) if keys.shape[0] else np.ones(0)
    still_unit = bool(keys.shape[0] == 0 or np.max(np.abs(norms - 1.0)) <= NORM_TOLERANCE)
    tuned = CacheModel(
        keys=FeatureMatrix(keys, normalized=still_unit),
        values=cache.values,
        num_classes=cache.num_classes,
        shots=cache.shots,
    )
    return tuned, TrainLog(epochs=tuple(history), key_checksum=checksum)
