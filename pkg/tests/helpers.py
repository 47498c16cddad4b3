"""Shared test fixtures: random normalized instances and small caches."""

import numpy as np

from fewcache import CacheModel, FeatureMatrix, build_cache


def unit_rows(rng, rows, cols):
    """Random rows of unit L2 norm (Gaussian direction)."""
    m = rng.standard_normal((rows, cols))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def random_instance(rng, max_classes=8, max_shots=4, max_dim=16):
    """A random (cache, classifier, query) triple with consistent dims."""
    n = int(rng.integers(2, max_classes + 1))
    k = int(rng.integers(1, max_shots + 1))
    c = int(rng.integers(2, max_dim + 1))
    feats = FeatureMatrix(unit_rows(rng, n * k, c))
    labels = np.repeat(np.arange(n), k)
    cache = build_cache(feats, labels, n)
    classifier = FeatureMatrix(unit_rows(rng, n, c))
    query = FeatureMatrix(unit_rows(rng, 1, c))
    return cache, classifier, query


def interior_instance(rng, max_classes=5, max_shots=3, max_dim=8, step=1e-4):
    """Random instance whose query/key cosines stay clear of the clamp kink.

    Central differences with the given step are a valid derivative oracle
    only while every cosine keeps the whole stencil inside (-1, 1); redraw
    until that holds.
    """
    while True:
        cache, classifier, query = random_instance(rng, max_classes, max_shots, max_dim)
        raw = cache.keys.data @ query.data[0]
        if np.max(np.abs(raw)) <= 1.0 - 2 * step:
            return cache, classifier, query


def orthogonal_cache(num_classes, shots=1, dim=None):
    """Cache of mutually orthogonal unit keys (basis vectors), class-major."""
    rows = num_classes * shots
    dim = dim or rows
    assert dim >= rows
    keys = np.zeros((rows, dim))
    keys[np.arange(rows), np.arange(rows)] = 1.0
    labels = np.repeat(np.arange(num_classes), shots)
    return build_cache(FeatureMatrix(keys), labels, num_classes)


def perturbed_cache(cache, i, j, delta):
    """Copy of the cache with keys[i, j] shifted by delta (for FD oracles)."""
    keys = cache.keys.data.copy()
    keys[i, j] += delta
    return CacheModel(
        keys=FeatureMatrix(keys, normalized=False),
        values=cache.values,
        num_classes=cache.num_classes,
        shots=cache.shots,
    )
