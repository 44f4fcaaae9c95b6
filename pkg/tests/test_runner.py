"""Tests for the run harness."""

import math

import numpy as np
import pytest

from marblr.engine import MarBLRConfig, run_stream
from marblr.features import FeatureMap, FeatureVariant, identity_revision_theta
from marblr.metrics import EciMethod
from marblr.refit import RefitManager, RefitStrategy
from marblr.reviser.locked import LockedReviser
from marblr.runner import (build_revision_stream, regret_report, run_scenario_stream, summarize,
                           windowed_metrics)
from marblr.simulation import ScenarioSpec, ShiftKind, generate


class TestRevisionStream:

    def test_recalibrate(self):
        batches = generate(ScenarioSpec(T=5, n=8, d_x=3))
        stream = build_revision_stream(batches, FeatureMap())
        assert stream.T == 5
        assert stream.dim == 2
        assert stream.refit_probabilities is None
        np.testing.assert_array_equal(stream.batches[2].y, batches[2].y)

    def test_ensemble_needs_refit(self):
        batches = generate(ScenarioSpec(T=2, n=8, d_x=3))
        with pytest.raises(ValueError):
            build_revision_stream(batches, FeatureMap(FeatureVariant.ENSEMBLE))

    def test_refit_uses_past_steps_only(self):
        batches = generate(ScenarioSpec(scenario=3, T=6, n=40, d_x=2))
        refit = RefitManager(2, RefitStrategy.ALL)
        stream = build_revision_stream(batches, FeatureMap(FeatureVariant.ENSEMBLE), refit)
        np.testing.assert_array_equal(stream.refit_probabilities[0], batches[0].original_score)
        assert refit.refits == 5
        assert stream.dim == 3

    def test_run_scenario_stream(self):
        batches = generate(ScenarioSpec(T=4, n=10, d_x=2))
        fmap = FeatureMap(FeatureVariant.LOGISTIC_REVISION, n_vars=2)
        config = MarBLRConfig(identity_revision_theta(fmap), np.eye(fmap.dim))
        history = run_scenario_stream(LockedReviser(config), batches, fmap)
        np.testing.assert_allclose(history.probabilities(),
                                   np.concatenate([b.original_score for b in batches]), atol=1e-12)


class TestWindowedMetrics:

    def test_columns_and_warmup(self):
        rng = np.random.default_rng(0)
        probs = rng.uniform(size=60)
        outcomes = (rng.random(60) < probs).astype(float)
        time_index = np.repeat(np.arange(1, 7), 10)
        frame = windowed_metrics(probs, outcomes, time_index, 6, window=3)
        assert list(frame.columns) == ["t", "eci_window", "auc_window", "nll"]
        assert list(frame["t"]) == [1, 2, 3, 4, 5, 6]
        assert math.isnan(frame["eci_window"][0])
        assert not math.isnan(frame["auc_window"][2])

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            windowed_metrics([0.5], [1], [1], 1, window=0)


class TestRegretReport:

    def _stream(self, seed=0):
        batches = generate(ScenarioSpec(shift=ShiftKind.INITIAL, T=30, n=20, d_x=3, seed=seed))
        return build_revision_stream(batches, FeatureMap()).batches

    def test_blr_report(self):
        config = MarBLRConfig([0.0, 1.0], np.eye(2))
        report = regret_report(config, self._stream(), [1])
        assert report.method == "blr"
        assert report.type2_bound_marblr is None
        assert report.type2_bound == report.type2_bound_blr
        base = report.c * report.n * report.R ** 2 * report.T * 2.0 / 2
        assert report.type1_bound == pytest.approx(math.log1p(base))
        assert len(report.per_step_nll["oracle"]) == 30

    def test_reviser_scored_by_batch_predictive(self):
        config = MarBLRConfig([0.0, 1.0], np.eye(2), alpha=0.1, delta2=0.1)
        stream = self._stream(2)
        report = regret_report(config, stream, [1])
        run = run_stream(config, stream)
        expected = [-s.log_predictive / s.outcomes.size for s in run.steps]
        np.testing.assert_allclose(report.per_step_nll["reviser"], expected, rtol=1e-12)

    def test_summary_with_step_eci(self):
        config = MarBLRConfig([0.0, 1.0], np.eye(2))
        history = LockedReviser(config).run(self._stream())
        default = summarize(history, window=5)
        step = summarize(history, window=5, eci_method=EciMethod.step(5))
        assert step["average_auc"] == default["average_auc"]
        assert step["average_eci"] != default["average_eci"]

    def test_marblr_report(self):
        config = MarBLRConfig([0.0, 1.0], np.eye(2), alpha=0.1, delta2=0.1)
        report = regret_report(config, self._stream(1), [1, 11, 21])
        assert report.type2_bound_blr is None
        assert report.type2_bound_marblr is not None
        assert report.tau_prime[0] == 1
        data = report.to_dict()
        assert data["type1_bound_per_obs"] == pytest.approx(report.type1_bound / 600)
        assert "pass" in data

    def test_summary(self):
        config = MarBLRConfig([0.0, 1.0], np.eye(2))
        history = LockedReviser(config).run(self._stream())
        summary = summarize(history, window=5)
        assert summary["method"] == "locked"
        assert summary["observations"] == 600
        assert 0.0 < summary["average_auc"] <= 1.0
