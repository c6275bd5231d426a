"""Loss terms: hand-evaluated values, oracles, and gradients."""

import numpy as np
import pytest

from affground import tensor as T
from affground.errors import ConfigError, ContractError
from affground.gradcheck import finite_difference_check
from affground.losses import (
    LossWeights,
    affordance_loss,
    cross_entropy,
    dice_loss,
    focal_loss,
    total_loss,
)


class TestFocalLoss:
    def test_single_positive_point_nine(self):
        p = T.tensor(np.array([0.9]), dtype=np.float64)
        value = focal_loss(p, np.array([1.0])).item()
        assert value == pytest.approx(0.25 * 0.01 * -np.log(0.9), rel=1e-6)
        assert value == pytest.approx(2.634e-4, rel=1e-3)

    def test_single_positive_point_five(self):
        p = T.tensor(np.array([0.5]), dtype=np.float64)
        value = focal_loss(p, np.array([1.0])).item()
        assert value == pytest.approx(0.25 * 0.25 * np.log(2.0), rel=1e-9)
        assert value == pytest.approx(0.043322, abs=1e-6)

    def test_reduces_to_half_balanced_bce(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, size=32)
        y = (rng.uniform(size=32) > 0.5).astype(np.float64)
        value = focal_loss(T.tensor(p, dtype=np.float64), y,
                           alpha=0.5, gamma=0.0).item()
        bce = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
        assert value == pytest.approx(0.5 * bce, abs=1e-10)

    def test_rejects_scores_outside_unit_interval(self):
        with pytest.raises(ContractError):
            focal_loss(T.tensor(np.array([1.2]), dtype=np.float64), np.array([1.0]))

    def test_boundary_scores_are_clamped_not_rejected(self):
        p = T.tensor(np.array([0.0, 1.0]), dtype=np.float64)
        value = focal_loss(p, np.array([0.0, 1.0])).item()
        assert np.isfinite(value)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        p = T.tensor(rng.uniform(0.01, 0.99, size=50), dtype=np.float64)
        y = rng.uniform(size=50)
        assert focal_loss(p, y).item() >= 0.0


class TestDiceLoss:
    def test_perfect_binary_match(self):
        p = T.tensor(np.array([1.0, 1.0, 0.0, 0.0]), dtype=np.float64)
        assert dice_loss(p, np.array([1.0, 1.0, 0.0, 0.0])).item() == \
            pytest.approx(0.0, abs=1e-12)

    def test_total_miss(self):
        p = T.tensor(np.array([0.0, 0.0]), dtype=np.float64)
        assert dice_loss(p, np.array([1.0, 1.0])).item() == \
            pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            p = rng.uniform(0.0, 1.0, size=n)
            y = (rng.uniform(size=n) > 0.6).astype(np.float64)
            value = dice_loss(T.tensor(p, dtype=np.float64), y).item()
            expected = 1.0 - (2.0 * (p * y).sum() + 1.0) / (p.sum() + y.sum() + 1.0)
            assert value == pytest.approx(expected, abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(3)
        p = T.tensor(rng.uniform(size=30), dtype=np.float64)
        y = rng.uniform(size=30)
        assert 0.0 <= dice_loss(p, y).item() <= 1.0


class TestAffordanceLoss:
    def test_perfect_prediction_near_zero(self):
        y = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
        p = np.where(y > 0, 1.0 - 1e-7, 1e-7)
        assert affordance_loss(T.tensor(p, dtype=np.float64), y).item() < 1e-5

    def test_equals_sum_of_components(self):
        rng = np.random.default_rng(4)
        p_data = rng.uniform(0.01, 0.99, size=25)
        y = rng.uniform(size=25)
        p = T.tensor(p_data, dtype=np.float64)
        total = affordance_loss(p, y).item()
        parts = focal_loss(p, y).item() + dice_loss(p, y).item()
        assert total == pytest.approx(parts, abs=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        y = (rng.uniform(size=12) > 0.5).astype(np.float64)
        logits = T.tensor(rng.normal(size=(12, 1)), requires_grad=True,
                          dtype=np.float64)
        err = finite_difference_check(
            lambda z: affordance_loss(T.sigmoid(z), y), logits, h=1e-6)
        assert err <= 1e-4


class TestTotalLoss:
    def test_weighted_sum_defaults(self):
        w = LossWeights()
        l_txt = T.tensor(np.array(0.7), dtype=np.float64)
        l_aff = T.tensor(np.array(0.3), dtype=np.float64)
        assert total_loss(l_txt, l_aff, w).item() == pytest.approx(1.3, abs=1e-12)

    def test_zero_text_weight_blocks_gradient(self):
        w = LossWeights(lambda_txt=0.0)
        l_txt = T.tensor(np.array(0.7), requires_grad=True, dtype=np.float64)
        l_aff = T.tensor(np.array(0.3), requires_grad=True, dtype=np.float64)
        T.backward(total_loss(l_txt, l_aff, w))
        assert l_txt.grad is None or np.all(l_txt.grad == 0.0)
        np.testing.assert_allclose(l_aff.grad, 2.0)

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_txt=-0.1)

    def test_gradcheck_full_objective(self):
        rng = np.random.default_rng(6)
        y = (rng.uniform(size=10) > 0.5).astype(np.float64)
        w = LossWeights()
        x = T.tensor(rng.normal(size=(1, 14)), requires_grad=True, dtype=np.float64)

        def objective(t):
            logits = T.slice_cols(t, 0, 4)
            scores = T.sigmoid(T.transpose(T.slice_cols(t, 4, 14)))
            l_txt = cross_entropy(logits, 2)
            l_aff = affordance_loss(scores, y)
            return total_loss(l_txt, l_aff, w)

        assert finite_difference_check(objective, x, h=1e-6) <= 1e-4


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = T.tensor(np.zeros((1, 4)), dtype=np.float64)
        assert cross_entropy(logits, 1).item() == pytest.approx(np.log(4.0))

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(1, 6)) * 3
        value = cross_entropy(T.tensor(z, dtype=np.float64), 4).item()
        probs = np.exp(z) / np.exp(z).sum()
        assert value == pytest.approx(-np.log(probs[0, 4]), rel=1e-10)

    def test_extreme_logits_stay_finite(self):
        z = T.tensor(np.array([[1000.0, 0.0, -1000.0]]), dtype=np.float64)
        assert np.isfinite(cross_entropy(z, 0).item())

    def test_bad_target_rejected(self):
        with pytest.raises(ContractError):
            cross_entropy(T.tensor(np.zeros((1, 3)), dtype=np.float64), 3)
