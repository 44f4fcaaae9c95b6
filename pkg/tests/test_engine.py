"""Tests for the MarBLR filter."""

import math

import numpy as np
import pytest
from scipy.special import expit, logit

from marblr.belief import CollapseMode, GaussianBelief, WeightedComponent
from marblr.engine import (EngineState, MarBLRConfig, MarBLREngine, RunObserver, batch_log_predictive,
                           init_state, predict_proba, predict_step, run_stream, update_step)
from marblr.errors import ConfigError, DimensionError
from marblr.logistic import LabeledBatch, PredictiveMethod


def blr_config(d, scale=1.0):
    return MarBLRConfig(np.zeros(d), scale * np.eye(d))


def reference_blr(theta, sigma, stream):
    """Single-Gaussian recursion: one Newton step from the prior mean per batch."""
    mean, cov = np.array(theta, dtype=float), np.array(sigma, dtype=float)
    probs, means = [], []
    for batch in stream:
        m = batch.z @ mean
        s2 = np.einsum("ij,jk,ik->i", batch.z, cov, batch.z)
        probs.append(expit(m / np.sqrt(1.0 + math.pi * s2 / 8.0)))
        p = expit(m)
        grad = batch.z.T @ (batch.y - p)
        precision = np.linalg.inv(cov) + (batch.z.T * (p * (1.0 - p))) @ batch.z
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        mean = mean + cov @ grad
        means.append(mean)
    return np.concatenate(probs), np.array(means)


class TestConfig:

    def test_scalar_sigma(self):
        config = MarBLRConfig([0.0, 1.0], 2.0)
        np.testing.assert_array_equal(config.sigma_init, 2.0 * np.eye(2))

    @pytest.mark.parametrize("alpha,delta2", [(-0.1, 0.1), (1.5, 0.1), (0.1, -1.0), (0.1, math.inf)])
    def test_invalid_hyperparameters(self, alpha, delta2):
        with pytest.raises(ConfigError):
            MarBLRConfig([0.0], 1.0, alpha=alpha, delta2=delta2)

    def test_invalid_prior(self):
        with pytest.raises(ConfigError):
            MarBLRConfig([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ConfigError):
            MarBLRConfig([0.0, 0.0], np.eye(3))

    def test_from_dict(self):
        config = MarBLRConfig.from_dict({"theta_init": [0, 1], "sigma_init_scale": 0.5,
                                         "alpha": 0.1, "delta2": 0.2, "collapse_mode": "full",
                                         "predictive": "mc", "mc_samples": 100, "mc_seed": 4})
        assert config.alpha == 0.1
        assert config.collapse_mode is CollapseMode.FULL_MOMENT
        assert config.predictive_method == PredictiveMethod.monte_carlo(100, 4)
        np.testing.assert_array_equal(config.sigma_init, 0.5 * np.eye(2))
        assert MarBLRConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()

    def test_from_dict_requires_theta(self):
        with pytest.raises(ConfigError):
            MarBLRConfig.from_dict({"alpha": 0.1})

    def test_from_dict_unknown_mode(self):
        with pytest.raises(ConfigError):
            MarBLRConfig.from_dict({"theta_init": [0.0], "collapse_mode": "median"})


class TestInitAndPredict:

    def test_initial_state(self):
        state = init_state(blr_config(2))
        np.testing.assert_array_equal(state.weights, [0.0, 1.0])
        np.testing.assert_array_equal(state.branches[1].belief.mean, [0.0, 0.0])
        np.testing.assert_array_equal(state.branches[1].belief.cov, np.eye(2))
        assert state.t == 1

    def test_switching_config_same_initial_state(self):
        state = init_state(MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.2, delta2=0.3))
        np.testing.assert_array_equal(state.weights, [0.0, 1.0])

    def test_blr_mixture(self):
        mixture = predict_step(init_state(blr_config(2)), blr_config(2))
        active = mixture.active()
        assert len(active) == 1
        assert mixture.components[(0, 1)].weight == 1.0
        np.testing.assert_array_equal(active[0].belief.cov, np.eye(2))

    def test_switching_mixture(self):
        config = MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=0.5)
        mixture = predict_step(init_state(config), config)
        stay, jump = mixture.components[(0, 1)], mixture.components[(1, 1)]
        assert stay.weight == pytest.approx(0.9)
        assert jump.weight == pytest.approx(0.1)
        np.testing.assert_allclose(stay.belief.cov, np.eye(2))
        np.testing.assert_allclose(jump.belief.cov, 1.5 * np.eye(2))
        assert mixture.components[(0, 0)].inert and mixture.components[(1, 0)].inert

    def test_symmetric_prior_gives_one_half(self):
        config = MarBLRConfig(np.zeros(3), np.eye(3), alpha=0.1, delta2=0.5)
        z = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_allclose(predict_proba(init_state(config), config, z), 0.5)

    def test_point_mass_limit(self):
        config = MarBLRConfig([1.0, 0.5], 1e-12 * np.eye(2))
        probs = predict_proba(init_state(config), config, np.array([[1.0, 2.0]]))
        assert probs[0] == pytest.approx(0.8808, abs=1e-4)

    def test_empty_rows(self):
        config = blr_config(2)
        assert predict_proba(init_state(config), config, np.zeros((0, 2))).size == 0

    def test_dimension_mismatch(self):
        config = blr_config(2)
        with pytest.raises(DimensionError):
            predict_proba(init_state(config), config, np.ones((1, 3)))


class TestUpdate:

    def test_empty_batch_keeps_transition_weights(self):
        config = MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=0.5)
        state = update_step(init_state(config), config, LabeledBatch.empty(2))
        np.testing.assert_allclose(state.weights, [0.9, 0.1])
        np.testing.assert_allclose(state.branches[0].belief.cov, np.eye(2))
        np.testing.assert_allclose(state.branches[1].belief.cov, 1.5 * np.eye(2))
        assert state.t == 2

    def test_weights_stay_normalized(self, stream_factory):
        config = MarBLRConfig(np.zeros(3), np.eye(3), alpha=0.05, delta2=0.2)
        state = init_state(config)
        for batch in stream_factory(5, 30, 10, 3):
            state = update_step(state, config, batch)
            assert state.weights.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(state.weights >= 0.0)

    def test_no_jumps_means_branch_zero(self, stream_factory):
        config = MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.0, delta2=0.5)
        state = init_state(config)
        for batch in stream_factory(2, 5, 10, 2):
            state = update_step(state, config, batch)
        np.testing.assert_array_equal(state.weights, [1.0, 0.0])

    def test_dimension_mismatch(self):
        config = blr_config(2)
        with pytest.raises(DimensionError):
            update_step(init_state(config), config, LabeledBatch(np.ones((2, 3)), [0, 1]))

    def test_state_validation(self):
        belief = GaussianBelief([0.0], [[1.0]])
        with pytest.raises(ValueError):
            EngineState((WeightedComponent(0.5, belief), WeightedComponent(0.4, belief)))


class TestBLREquivalence:

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_single_gaussian_recursion(self, seed, stream_factory):
        d = 1 + seed % 3
        stream = stream_factory(seed, 50, 20, d)
        config = MarBLRConfig(np.zeros(d), np.eye(d))
        history = run_stream(config, stream)
        probs, means = reference_blr(config.theta_init, config.sigma_init, stream)
        np.testing.assert_allclose(history.probabilities(), probs, rtol=0, atol=1e-12)
        np.testing.assert_allclose(history.theta_trajectory(), means, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_posterior(self, seed):
        rng = np.random.default_rng(100 + seed)
        stream = [LabeledBatch(np.ones((20, 1)), (rng.random(20) < 0.75).astype(float))
                  for _ in range(50)]
        history = run_stream(blr_config(1), stream)

        grid = np.linspace(-6.0, 6.0, 10**4)
        y = LabeledBatch.concat(stream).y
        k, n = y.sum(), y.size
        log_post = -0.5 * grid ** 2 + k * np.log(expit(grid)) + (n - k) * np.log(expit(-grid))
        w = np.exp(log_post - log_post.max())
        w /= w.sum()
        grid_mean = float(w @ grid)
        grid_var = float(w @ (grid - grid_mean) ** 2)

        final = history.steps[-1]
        assert final.posterior_mean[0] == pytest.approx(grid_mean, abs=0.02)
        assert final.posterior_cov[0, 0] == pytest.approx(grid_var, abs=0.02)
        assert grid_mean == pytest.approx(logit(0.75), abs=0.25)

    @pytest.mark.parametrize("seed", range(3))
    def test_grid_posterior_two_dimensions(self, seed, stream_factory):
        stream = stream_factory(200 + seed, 50, 20, 2)
        history = run_stream(blr_config(2), stream)

        axis = np.linspace(-6.0, 6.0, 481)
        grid = np.stack([g.ravel() for g in np.meshgrid(axis, axis, indexing="ij")])
        log_post = -0.5 * np.sum(grid ** 2, axis=0)
        for batch in stream:
            eta = batch.z @ grid
            log_post += batch.y @ -np.logaddexp(0.0, -eta) + (1.0 - batch.y) @ -np.logaddexp(0.0, eta)
        w = np.exp(log_post - log_post.max())
        w /= w.sum()
        grid_mean = grid @ w
        centered = grid - grid_mean[:, None]
        grid_cov = (centered * w) @ centered.T

        final = history.steps[-1]
        np.testing.assert_allclose(final.posterior_mean, grid_mean, atol=0.05)
        np.testing.assert_allclose(final.posterior_cov, grid_cov, rtol=0.3, atol=2e-3)

    @pytest.mark.parametrize("seed", range(3))
    def test_posterior_trace_never_grows(self, seed, stream_factory):
        history = run_stream(blr_config(3), stream_factory(seed, 40, 15, 3))
        traces = np.array([np.trace(s.posterior_cov) for s in history.steps])
        assert traces[0] < 3.0
        assert np.all(np.diff(traces) <= 1e-12)


class TestBatchPredictive:

    def test_matches_update_evidence(self, stream_factory):
        config = MarBLRConfig(np.zeros(3), np.eye(3), alpha=0.05, delta2=0.2)
        state = init_state(config)
        for batch in stream_factory(4, 5, 12, 3):
            expected = batch_log_predictive(state, config, batch)
            state = update_step(state, config, batch)
            assert state.log_evidence == expected
            assert expected < 0.0

    def test_empty_batch(self):
        config = blr_config(2)
        assert batch_log_predictive(init_state(config), config, LabeledBatch.empty(2)) == 0.0

    def test_joint_predictive_of_shared_intercept(self):
        # 15 of 20 outcomes positive under a N(0, 1) intercept prior
        y = np.array([1.0] * 15 + [0.0] * 5)
        config = blr_config(1)
        joint = batch_log_predictive(init_state(config), config, LabeledBatch(np.ones((20, 1)), y))

        grid = np.linspace(-8.0, 8.0, 20001)
        integrand = (-0.5 * grid ** 2 - 0.5 * math.log(2.0 * math.pi)
                     + 15 * np.log(expit(grid)) + 5 * np.log(expit(-grid)))
        exact = float(np.log(np.sum(np.exp(integrand)) * (grid[1] - grid[0])))

        assert joint == pytest.approx(exact, abs=0.3)
        # every marginal prediction is 1/2, and their product ignores the shared intercept
        assert joint > 20 * math.log(0.5) + 1.0

    def test_history_records_batch_predictive(self, stream_factory):
        stream = stream_factory(6, 10, 20, 2)
        config = MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=0.1)
        history = run_stream(config, stream)
        state = init_state(config)
        for step, batch in zip(history.steps, stream):
            assert step.log_predictive == pytest.approx(batch_log_predictive(state, config, batch))
            state = update_step(state, config, batch)
        assert history.batched_nll_series().sum() == pytest.approx(
            -sum(s.log_predictive for s in history.steps))


class RecordingObserver(RunObserver):

    def __init__(self):
        self.events = []

    def on_prediction(self, t, probabilities, state):
        self.events.append(("prediction", t, state.t))

    def on_update(self, t, state):
        self.events.append(("update", t, state.t))


class FailingObserver(RunObserver):

    def on_prediction(self, t, probabilities, state):
        raise RuntimeError("observer failure")


class TestEngine:

    def test_empty_stream(self):
        history = run_stream(blr_config(2), [])
        assert history.T == 0
        assert history.probabilities().size == 0

    def test_deterministic(self, stream_factory):
        stream = stream_factory(9, 20, 15, 3)
        config = MarBLRConfig(np.zeros(3), np.eye(3), alpha=0.1, delta2=0.3)
        first = run_stream(config, stream)
        second = run_stream(config, stream)
        np.testing.assert_array_equal(first.probabilities(), second.probabilities())
        assert first.to_json() == second.to_json()

    def test_prequential_prefix(self, stream_factory):
        stream = stream_factory(4, 12, 10, 2)
        config = MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=0.3)
        full = run_stream(config, stream)
        changed = list(stream[:6]) + [LabeledBatch(b.z, 1.0 - b.y) for b in stream[6:]]
        other = run_stream(config, changed)
        for t in range(7):
            np.testing.assert_array_equal(full.steps[t].probabilities, other.steps[t].probabilities)

    def test_observers(self, stream_factory):
        observer = RecordingObserver()
        history = run_stream(blr_config(2), stream_factory(1, 3, 5, 2), hooks=observer)
        assert observer.events == [("prediction", 1, 1), ("update", 1, 2),
                                   ("prediction", 2, 2), ("update", 2, 3),
                                   ("prediction", 3, 3), ("update", 3, 4)]
        assert [s.t for s in history.states] == [1, 2, 3]

    def test_failing_observer_does_not_stop_run(self, stream_factory):
        engine = MarBLREngine(blr_config(2))
        engine.add_observer(FailingObserver())
        history = engine.run(stream_factory(1, 3, 5, 2))
        assert history.T == 3

    def test_reset(self, stream_factory):
        engine = MarBLREngine(blr_config(2))
        engine.run(stream_factory(1, 3, 5, 2))
        engine.reset()
        assert engine.state.t == 1
        np.testing.assert_array_equal(engine.state.weights, [0.0, 1.0])

    def test_method_names(self, stream_factory):
        stream = stream_factory(1, 2, 5, 2)
        assert run_stream(blr_config(2), stream).method == "blr"
        assert run_stream(MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=0.1), stream).method == "marblr"

    def test_switching_tracks_a_jump(self):
        rng = np.random.default_rng(12)
        stream = []
        for t in range(60):
            z = np.column_stack([np.ones(50), rng.standard_normal(50)])
            theta = np.array([-1.5, 1.0]) if t < 30 else np.array([1.5, 1.0])
            stream.append(LabeledBatch(z, (rng.random(50) < expit(z @ theta)).astype(float)))
        marblr = run_stream(MarBLRConfig(np.zeros(2), np.eye(2), alpha=0.1, delta2=1.0), stream)
        blr = run_stream(blr_config(2), stream)
        assert marblr.theta_trajectory()[-1, 0] > blr.theta_trajectory()[-1, 0]
