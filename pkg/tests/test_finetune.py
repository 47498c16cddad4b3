"""Closed-form key gradients, the optimizer recurrences, and fine_tune."""

import math
import re

import numpy as np
import pytest

from fewcache import (
    FeatureMatrix,
    FewcacheError,
    Hyperparams,
    LabelRangeError,
    NormalizationError,
    build_cache,
    ce_loss,
    cosine_lr,
    fine_tune,
    key_gradient,
    predict,
    softmax,
)
from fewcache.finetune import FineTuneConfig
from helpers import interior_instance, orthogonal_cache, perturbed_cache, unit_rows

# Frozen from 40-digit arbitrary-precision evaluations.
EXP_NEG_5P5 = 0.004086771438464067
LN_4 = 1.3862943611198906
LN_2 = 0.6931471805599453
LOSS_10_NEG10 = 2.0611536203143807e-09  # -log softmax([10, -10])[0]
# softmax([2.0, exp(-5.5)]) of the identity-cache toy logits
TOY_P0 = 0.8803673249952155
TOY_P1 = 0.11963267500478448


def toy_setup():
    cache = build_cache(FeatureMatrix(np.eye(2)), [0, 1], 2)
    classifier = FeatureMatrix(np.eye(2))
    query = FeatureMatrix(np.array([[1.0, 0.0]]))
    return cache, classifier, query


class TestCeLoss:
    def test_uniform_logits(self):
        assert ce_loss(np.zeros(4), 2) == pytest.approx(LN_4, rel=1e-14)

    def test_confident_correct(self):
        assert ce_loss(np.array([10.0, -10.0]), 0) == pytest.approx(
            LOSS_10_NEG10, rel=1e-9
        )

    def test_two_way_tie(self):
        assert ce_loss(np.array([0.0, 0.0]), 1) == pytest.approx(LN_2, rel=1e-14)

    def test_target_out_of_range(self):
        with pytest.raises(LabelRangeError):
            ce_loss(np.zeros(3), 3)
        with pytest.raises(LabelRangeError):
            ce_loss(np.zeros(3), -1)

    def test_max_subtraction_stability(self):
        # would overflow exp() without the shift
        loss = ce_loss(np.array([1e4, 1e4 - 5.0]), 0)
        assert math.isfinite(loss)
        assert loss == pytest.approx(math.log(1 + math.exp(-5.0)), rel=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = softmax(rng.standard_normal((6, 9)) * 50)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)


class TestKeyGradient:
    def test_alpha_zero_gives_zero_matrix(self):
        cache, classifier, query = toy_setup()
        g = key_gradient(query, cache, classifier, Hyperparams(0.0, 5.5), 0)
        assert np.array_equal(g, np.zeros((2, 2)))

    def test_beta_zero_gives_zero_matrix(self):
        cache, classifier, query = toy_setup()
        g = key_gradient(query, cache, classifier, Hyperparams(1.0, 0.0), 0)
        assert np.array_equal(g, np.zeros((2, 2)))

    def test_toy_rows_match_closed_form(self):
        # row i = alpha * beta * A_i * (p[c_i] - y[c_i]) * query with
        # p = softmax([2.0, exp(-5.5)]) and target class 0
        cache, classifier, query = toy_setup()
        g = key_gradient(query, cache, classifier, Hyperparams(1.0, 5.5), 0)
        row0 = 5.5 * 1.0 * (TOY_P0 - 1.0) * np.array([1.0, 0.0])
        row1 = 5.5 * EXP_NEG_5P5 * (TOY_P1 - 0.0) * np.array([1.0, 0.0])
        assert g[0] == pytest.approx(row0, rel=1e-12)
        assert g[1] == pytest.approx(row1, rel=1e-12)

    def test_matches_finite_differences_near_toy(self):
        # slightly rotated query keeps every cosine interior, where the
        # similarity clamp is the identity and central differences are exact
        cache, classifier, _ = toy_setup()
        theta = 0.05
        query = FeatureMatrix(np.array([[math.cos(theta), math.sin(theta)]]))
        hp = Hyperparams(1.0, 5.5)
        g = key_gradient(query, cache, classifier, hp, 0)
        fd = self._central_differences(query, cache, classifier, hp, 0)
        rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
        assert rel < 1e-5

    def test_matches_finite_differences_random(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            cache, classifier, query = interior_instance(
                rng, max_classes=5, max_shots=3, max_dim=8
            )
            hp = Hyperparams(float(rng.uniform(0.2, 3)), float(rng.uniform(0.5, 8)))
            target = int(rng.integers(0, cache.num_classes))
            g = key_gradient(query, cache, classifier, hp, target)
            fd = self._central_differences(query, cache, classifier, hp, target)
            rel = np.linalg.norm(g - fd) / max(
                np.linalg.norm(g), np.linalg.norm(fd), 1e-12
            )
            assert rel < 1e-5

    def test_clamped_rows_get_zero_gradient(self):
        # raw cosine above 1 means the clamp is locally flat
        keys = FeatureMatrix(np.array([[1.0 + 5e-5, 0.0], [0.0, 1.0]]))
        cache = build_cache(keys, [0, 1], 2)
        _, classifier, query = toy_setup()
        g = key_gradient(query, cache, classifier, Hyperparams(1.0, 5.5), 0)
        assert np.array_equal(g[0], np.zeros(2))
        assert not np.array_equal(g[1], np.zeros(2))

    def test_target_out_of_range(self):
        cache, classifier, query = toy_setup()
        with pytest.raises(LabelRangeError):
            key_gradient(query, cache, classifier, Hyperparams(), 2)

    @staticmethod
    def _central_differences(query, cache, classifier, hp, target, h=1e-4):
        fd = np.zeros_like(cache.keys.data)
        for i in range(cache.size):
            for j in range(cache.dim):
                up = ce_loss(
                    predict(query, perturbed_cache(cache, i, j, +h), classifier, hp),
                    target,
                )
                down = ce_loss(
                    predict(query, perturbed_cache(cache, i, j, -h), classifier, hp),
                    target,
                )
                fd[i, j] = (up - down) / (2 * h)
        return fd


class TestCosineSchedule:
    def test_step_zero_is_base_rate(self):
        assert cosine_lr(1e-3, 0, 100) == 1e-3

    def test_final_step_bound(self):
        base, total = 1e-3, 80
        final = cosine_lr(base, total - 1, total)
        bound = base * (1 - math.cos(math.pi * (total - 1) / total)) / 2
        assert 0.0 < final <= bound

    def test_monotone_decay(self):
        rates = [cosine_lr(0.5, t, 40) for t in range(40)]
        assert all(b < a for a, b in zip(rates, rates[1:]))


def orthogonal_train_setup(seed=0, dim=16):
    rng = np.random.default_rng(seed)
    cache = orthogonal_cache(4, 1, dim=dim)
    feats = cache.keys
    labels = [0, 1, 2, 3]
    classifier = FeatureMatrix(unit_rows(rng, 4, dim))
    return cache, feats, labels, classifier


class TestFineTune:
    def test_zero_learning_rate_is_identity(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        cfg = FineTuneConfig(learning_rate=0.0, epochs=3)
        tuned, _ = fine_tune(cache, (feats, labels), classifier, Hyperparams(), cfg)
        assert tuned.keys.data.tobytes() == cache.keys.data.tobytes()

    def test_zero_epochs_is_identity(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        cfg = FineTuneConfig(epochs=0)
        tuned, log = fine_tune(cache, (feats, labels), classifier, Hyperparams(), cfg)
        assert tuned.keys.data.tobytes() == cache.keys.data.tobytes()
        assert log.epochs == ()

    def test_values_and_classifier_frozen(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        clf_before = classifier.data.tobytes()
        values_before = cache.values.data.tobytes()
        tuned, _ = fine_tune(
            cache, (feats, labels), classifier, Hyperparams(), FineTuneConfig(epochs=5)
        )
        assert tuned.values.data.tobytes() == values_before
        assert classifier.data.tobytes() == clf_before
        assert tuned.num_classes == cache.num_classes
        assert tuned.shots == cache.shots

    def test_seeded_runs_bitwise_identical(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        cfg = FineTuneConfig(seed=42)
        first = fine_tune(cache, (feats, labels), classifier, Hyperparams(), cfg)
        second = fine_tune(cache, (feats, labels), classifier, Hyperparams(), cfg)
        assert first[0].keys.data.tobytes() == second[0].keys.data.tobytes()
        assert first[1] == second[1]

    def test_single_adamw_step_matches_recurrences(self):
        # full-batch step with bias correction at t=1, written out by hand
        cache, feats, labels, classifier = orthogonal_train_setup()
        hp = Hyperparams(1.0, 5.5)
        cfg = FineTuneConfig(epochs=1, batch_size=16)

        grads = [
            key_gradient(
                FeatureMatrix(feats.data[i : i + 1]), cache, classifier, hp, labels[i]
            )
            for i in range(4)
        ]
        g = np.mean(grads, axis=0)
        lr = cosine_lr(cfg.learning_rate, 0, 1)
        m = (1 - cfg.beta1) * g
        v = (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1)
        v_hat = v / (1 - cfg.beta2)
        expected = cache.keys.data * (1 - lr * cfg.weight_decay)
        expected = expected - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

        tuned, _ = fine_tune(cache, (feats, labels), classifier, hp, cfg)
        assert np.max(np.abs(tuned.keys.data - expected)) < 1e-6

    def test_single_sgd_step_matches_hand_update(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        hp = Hyperparams(1.0, 5.5)
        cfg = FineTuneConfig(
            epochs=1, batch_size=16, optimizer="sgd", weight_decay=0.0
        )
        grads = [
            key_gradient(
                FeatureMatrix(feats.data[i : i + 1]), cache, classifier, hp, labels[i]
            )
            for i in range(4)
        ]
        g = np.mean(grads, axis=0)
        expected = cache.keys.data - cfg.learning_rate * g
        tuned, _ = fine_tune(cache, (feats, labels), classifier, hp, cfg)
        assert np.max(np.abs(tuned.keys.data - expected)) < 1e-12

    def test_orthogonal_toy_converges(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        tuned, log = fine_tune(
            cache, (feats, labels), classifier, Hyperparams(1.0, 5.5), FineTuneConfig()
        )
        assert len(log.epochs) == 20
        assert all(e.accuracy == 1.0 for e in log.epochs)
        losses = [e.loss for e in log.epochs]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_renormalize_flag_keeps_unit_keys(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        cfg = FineTuneConfig(epochs=5, renormalize_keys=True)
        tuned, _ = fine_tune(cache, (feats, labels), classifier, Hyperparams(), cfg)
        norms = np.linalg.norm(tuned.keys.data, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-12
        assert tuned.keys.normalized

    def test_normalized_flag_tracks_actual_norms(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        tuned, _ = fine_tune(
            cache, (feats, labels), classifier, Hyperparams(), FineTuneConfig()
        )
        drift = np.max(np.abs(np.linalg.norm(tuned.keys.data, axis=1) - 1.0))
        assert tuned.keys.normalized == (drift <= 1e-4)

    def test_empty_training_set_rejected(self):
        cache, _, _, classifier = orthogonal_train_setup()
        empty = FeatureMatrix(np.zeros((0, 16)))
        with pytest.raises(FewcacheError, match="empty training set"):
            fine_tune(cache, (empty, []), classifier, Hyperparams(), FineTuneConfig())

    def test_unnormalized_train_features_rejected(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        raw = FeatureMatrix(feats.data * 2.0, normalized=False)
        with pytest.raises(NormalizationError):
            fine_tune(cache, (raw, labels), classifier, Hyperparams(), FineTuneConfig())

    def test_train_label_out_of_range(self):
        cache, feats, _, classifier = orthogonal_train_setup()
        with pytest.raises(LabelRangeError):
            fine_tune(
                cache, (feats, [0, 1, 2, 9]), classifier, Hyperparams(), FineTuneConfig()
            )

    def test_log_checksum_pins_final_keys(self):
        import hashlib

        cache, feats, labels, classifier = orthogonal_train_setup()
        tuned, log = fine_tune(
            cache, (feats, labels), classifier, Hyperparams(), FineTuneConfig(epochs=2)
        )
        digest = hashlib.sha256(tuned.keys.data.tobytes()).hexdigest()
        assert log.key_checksum == digest

    def test_log_text_format(self):
        cache, feats, labels, classifier = orthogonal_train_setup()
        _, log = fine_tune(
            cache, (feats, labels), classifier, Hyperparams(), FineTuneConfig(epochs=3)
        )
        lines = log.to_text().splitlines()
        assert len(lines) == 3
        for n, line in enumerate(lines, start=1):
            assert re.fullmatch(rf"epoch {n} loss \d+\.\d{{6}} acc \d\.\d{{4}}", line)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FineTuneConfig(epochs=-1)
        with pytest.raises(ValueError):
            FineTuneConfig(batch_size=0)
        with pytest.raises(ValueError):
            FineTuneConfig(learning_rate=-1e-3)
        with pytest.raises(ValueError):
            FineTuneConfig(optimizer="rmsprop")
