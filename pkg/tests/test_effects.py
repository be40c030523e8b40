"""Effect functionals, gradients, and stratum aggregation."""

import numpy as np
import pytest

from lmeffects.effects import (
    DISPERSION_GRADIENT,
    aggregate_strata,
    average_effect,
    average_effect_gradient,
    delta_method_se,
    dispersion_change,
)


class TestAverageEffect:
    def test_unit_scale_collapses_to_alpha(self):
        for alpha in [-1.0, 0.0, 2.5]:
            got = average_effect(alpha, 1.0, 3.0, 1.0, 0.3, 0.7)
            assert got == pytest.approx(alpha, abs=1e-14)

    def test_null_parameters_give_zero(self):
        assert average_effect(0.0, 1.0, 5.0, 2.0, 0.5, 0.5) == 0.0

    def test_worked_example(self):
        got = average_effect(1.0, 2.0, 3.0, 1.0, 0.5, 0.5)
        assert got == pytest.approx(2.0, abs=1e-14)

    def test_shares_normalised(self):
        a = average_effect(1.0, 2.0, 3.0, 1.0, 0.5, 0.5)
        b = average_effect(1.0, 2.0, 3.0, 1.0, 50, 50)
        assert a == pytest.approx(b, abs=1e-14)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            average_effect(1.0, 0.0, 3.0, 1.0, 0.5, 0.5)

    def test_nonpositive_share_rejected(self):
        with pytest.raises(ValueError):
            average_effect(1.0, 1.0, 3.0, 1.0, 0.0, 1.0)


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(25):
            alpha = rng.normal()
            sigma = rng.uniform(0.3, 3.0)
            tm, cm = rng.normal(size=2) * 3
            pt = rng.uniform(0.2, 0.8)
            pc = 1.0 - pt
            point = np.array([alpha, sigma, tm, cm])
            grad = average_effect_gradient(alpha, sigma, tm, cm, pt, pc)
            for k in range(4):
                hi, lo = point.copy(), point.copy()
                hi[k] += h
                lo[k] -= h
                numeric = (
                    average_effect(*hi, pt, pc) - average_effect(*lo, pt, pc)
                ) / (2 * h)
                denom = max(abs(grad[k]), 1.0)
                assert abs(grad[k] - numeric) / denom < 1e-6


class TestDispersion:
    def test_values(self):
        assert dispersion_change(1.0) == 0.0
        assert dispersion_change(0.8) == pytest.approx(-0.2)
        # the fitted-effect scale seen in practice for count outcomes
        assert dispersion_change(0.3933) == pytest.approx(-0.6067)


class TestDeltaMethodSE:
    def test_dispersion_se_is_sigma_sd(self):
        cov = np.diag([0.5, 0.09, 1.0, 2.0])
        assert delta_method_se(DISPERSION_GRADIENT, cov) == pytest.approx(0.3)

    def test_zero_covariance(self):
        assert delta_method_se([1.0, 2.0], np.zeros((2, 2))) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            delta_method_se([1.0, 2.0, 3.0], np.eye(2))

    def test_negative_variance_clamped(self):
        cov = np.array([[-1e-12]])
        with pytest.warns(UserWarning):
            assert delta_method_se([1.0], cov) == 0.0


class TestAggregateStrata:
    def test_single_stratum_identity(self):
        value, se = aggregate_strata([1.7], [0.4], [1.0])
        assert (value, se) == (1.7, 0.4)

    def test_equal_effects_are_weight_free(self):
        for w in ([0.5, 0.5], [0.1, 0.9]):
            value, _ = aggregate_strata([2.0, 2.0], [0.3, 0.7], w)
            assert value == pytest.approx(2.0)

    def test_worked_example(self):
        value, se = aggregate_strata([1.0, 3.0], [1.0, 1.0], [0.25, 0.75])
        assert value == pytest.approx(2.5)
        assert se == pytest.approx(np.sqrt(0.0625 + 0.5625), abs=1e-10)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            aggregate_strata([1.0, 2.0], [0.1, 0.1], [0.5, 0.6])

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            aggregate_strata([1.0, 2.0], [0.1], [0.5, 0.5])
