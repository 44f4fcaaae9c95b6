"""Tests for Gaussian beliefs, inflation and mixture collapsing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marblr.belief import (CollapseMode, GaussianBelief, WeightedComponent, check_mixture_weights,
                           collapse_mixture, gaussian_log_density, inflate)
from marblr.errors import DimensionError, NotPositiveDefiniteError


class TestGaussianBelief:

    def test_is_immutable(self):
        belief = GaussianBelief([0.0, 1.0], np.eye(2))
        with pytest.raises(ValueError):
            belief.mean[0] = 5.0

    def test_symmetrizes_covariance(self):
        belief = GaussianBelief([0.0, 0.0], [[2.0, 0.5], [0.5 + 1e-14, 1.0]])
        np.testing.assert_array_equal(belief.cov, belief.cov.T)

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(NotPositiveDefiniteError):
            GaussianBelief([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            GaussianBelief([0.0, 0.0, 0.0], np.eye(2))

    def test_precision_and_log_det(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.5]])
        belief = GaussianBelief([0.0, 0.0], cov)
        np.testing.assert_allclose(belief.precision(), np.linalg.inv(cov), atol=1e-12)
        assert belief.log_det_cov() == pytest.approx(math.log(np.linalg.det(cov)), abs=1e-12)


class TestLogDensity:

    def test_standard_normal_at_mode(self):
        belief = GaussianBelief([0.0], [[1.0]])
        assert gaussian_log_density([0.0], belief) == pytest.approx(-0.91894, abs=1e-5)

    def test_standard_normal_at_one(self):
        belief = GaussianBelief([0.0], [[1.0]])
        assert gaussian_log_density([1.0], belief) == pytest.approx(-1.41894, abs=1e-5)

    def test_matches_dense_formula(self):
        belief = GaussianBelief([0.0, 0.0], 2.0 * np.eye(2))
        x = np.array([1.0, 1.0])
        cov = 2.0 * np.eye(2)
        expected = (-math.log(2.0 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
                    - 0.5 * x @ np.linalg.inv(cov) @ x)
        assert gaussian_log_density(x, belief) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            gaussian_log_density([0.0, 0.0], GaussianBelief([0.0], [[1.0]]))


class TestInflate:

    def test_factor_one_is_identity(self):
        belief = GaussianBelief([1.0, 2.0], np.eye(2))
        assert inflate(belief, 1.0) is belief

    def test_scales_covariance(self):
        inflated = inflate(GaussianBelief([0.0, 0.0], np.eye(2)), 1.5)
        np.testing.assert_allclose(inflated.cov, 1.5 * np.eye(2))

    def test_small_jump_variance(self):
        inflated = inflate(GaussianBelief([0.0, 0.0], np.diag([2.0, 3.0])), 1.0 + 0.01)
        np.testing.assert_allclose(inflated.cov, np.diag([2.02, 3.03]), atol=1e-12)

    def test_factor_below_one(self):
        with pytest.raises(ValueError):
            inflate(GaussianBelief([0.0], [[1.0]]), 0.5)

    def test_keeps_mean(self):
        belief = GaussianBelief([0.3, -0.7], np.eye(2))
        np.testing.assert_array_equal(inflate(belief, 3.0).mean, belief.mean)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1),
           st.integers(min_value=1, max_value=6),
           st.floats(min_value=1.0, max_value=50.0))
    def test_density_at_mean_drops_by_log_factor(self, seed, d, factor):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((d, d))
        belief = GaussianBelief(rng.standard_normal(d), a @ a.T + np.eye(d))
        shift = gaussian_log_density(belief.mean, inflate(belief, factor)) - gaussian_log_density(belief.mean, belief)
        assert shift == pytest.approx(-0.5 * d * math.log(factor), abs=1e-9)


class TestCollapse:

    def _pair(self, w0, w1, m0, m1):
        return [WeightedComponent(w0, GaussianBelief([m0], [[1.0]])),
                WeightedComponent(w1, GaussianBelief([m1], [[1.0]]))]

    def test_single_component(self):
        belief = GaussianBelief([1.0, 2.0], np.eye(2))
        assert collapse_mixture([WeightedComponent(1.0, belief)]) is belief

    def test_equal_weights_paper_faithful(self):
        out = collapse_mixture(self._pair(0.5, 0.5, 0.0, 2.0), CollapseMode.PAPER_FAITHFUL)
        np.testing.assert_allclose(out.mean, [1.0])
        np.testing.assert_allclose(out.cov, [[1.0]])

    def test_equal_weights_full_moment(self):
        out = collapse_mixture(self._pair(0.5, 0.5, 0.0, 2.0), CollapseMode.FULL_MOMENT)
        np.testing.assert_allclose(out.mean, [1.0])
        np.testing.assert_allclose(out.cov, [[2.0]])

    def test_unequal_weights(self):
        out = collapse_mixture(self._pair(0.25, 0.75, 0.0, 4.0))
        np.testing.assert_allclose(out.mean, [3.0])
        np.testing.assert_allclose(out.cov, [[1.0]])

    def test_zero_weight_components_are_inert(self):
        out = collapse_mixture(self._pair(0.0, 1.0, 50.0, 2.0), CollapseMode.FULL_MOMENT)
        np.testing.assert_allclose(out.mean, [2.0])
        np.testing.assert_allclose(out.cov, [[1.0]])

    def test_empty(self):
        with pytest.raises(ValueError):
            collapse_mixture([])

    def test_all_zero_weights(self):
        with pytest.raises(ValueError):
            collapse_mixture(self._pair(0.0, 0.0, 0.0, 1.0))

    def test_weight_check(self):
        with pytest.raises(ValueError):
            check_mixture_weights(self._pair(0.5, 0.4, 0.0, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(min_value=2, max_value=5))
    def test_mean_preserved_and_full_dominates(self, seed, k):
        rng = np.random.default_rng(seed)
        d = 3
        weights = rng.dirichlet(np.ones(k))
        components = []
        for w in weights:
            a = rng.standard_normal((d, d))
            components.append(WeightedComponent(w, GaussianBelief(rng.standard_normal(d),
                                                                  a @ a.T + 0.1 * np.eye(d))))
        exact_mean = sum(c.weight * c.belief.mean for c in components)
        paper = collapse_mixture(components, CollapseMode.PAPER_FAITHFUL)
        full = collapse_mixture(components, CollapseMode.FULL_MOMENT)
        np.testing.assert_allclose(paper.mean, exact_mean, atol=1e-9)
        np.testing.assert_allclose(full.mean, exact_mean, atol=1e-9)
        assert np.linalg.eigvalsh(full.cov - paper.cov).min() >= -1e-9
