"""Tests for the drift simulator."""

import math

import numpy as np
import pytest

from marblr.errors import ConfigError
from marblr.metrics import auc
from marblr.simulation import (ScenarioSpec, ShiftKind, corrupted_steps, generate, generate_batch,
                               oracle_tau, original_coefficients, refit_labels, true_coefficients)


class TestScenarioSpec:

    def test_invalid_period(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(shift=ShiftKind.CYCLICAL, drift_params={"period": 0})

    def test_unknown_drift_parameter(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(drift_params={"wobble": 1.0})

    def test_invalid_scenario(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(scenario=4)

    def test_invalid_prevalence(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(scenario=1, group_prevalence=(0.5, 0.6))

    def test_round_trip(self):
        spec = ScenarioSpec(scenario=3, shift=ShiftKind.DECAY, T=50, n=10, seed=4,
                            drift_params={"corrupt_window": 5})
        again = ScenarioSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()


class TestGenerate:

    def test_shapes(self):
        spec = ScenarioSpec(T=7, n=13, d_x=4)
        stream = generate(spec)
        assert [b.t for b in stream] == list(range(1, 8))
        assert all(b.x.shape == (13, 4) and b.y.shape == (13,) for b in stream)
        assert all(b.group is None for b in stream)

    def test_deterministic(self):
        spec = ScenarioSpec(scenario=1, T=5, n=50, seed=7)
        first, second = generate(spec), generate(spec)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.y, b.y)
            np.testing.assert_array_equal(a.group, b.group)

    def test_batches_do_not_depend_on_T(self):
        short = generate(ScenarioSpec(shift=ShiftKind.CYCLICAL, T=5, n=20, seed=2))
        long = generate(ScenarioSpec(shift=ShiftKind.CYCLICAL, T=10, n=20, seed=2))
        np.testing.assert_array_equal(short[4].y, long[4].y)

    def test_group_prevalence(self):
        stream = generate(ScenarioSpec(scenario=1, T=200, n=100, seed=7))
        groups = np.concatenate([b.group for b in stream])
        assert 0.17 <= np.mean(groups == 0) <= 0.23

    def test_original_score_is_time_invariant_model(self):
        spec = ScenarioSpec(shift=ShiftKind.INITIAL, T=3, n=10, d_x=3)
        b0, beta = original_coefficients(spec)
        batch = generate_batch(spec, 2)
        np.testing.assert_allclose(batch.original_score, 1.0 / (1.0 + np.exp(-(b0 + batch.x @ beta))))

    def test_initial_shift(self):
        spec = ScenarioSpec(shift=ShiftKind.INITIAL, d_x=3)
        b0, beta = original_coefficients(spec)
        s0, sbeta = true_coefficients(spec, 1)
        assert s0 == pytest.approx(b0 + 1.0)
        assert sbeta[-1] == pytest.approx(beta[-1] + 0.5)
        assert true_coefficients(spec, 50)[0] == s0

    def test_cyclical(self):
        spec = ScenarioSpec(shift=ShiftKind.CYCLICAL, T=100)
        b0, _ = original_coefficients(spec)
        assert true_coefficients(spec, 10)[0] == pytest.approx(b0 + 1.0)
        assert true_coefficients(spec, 40)[0] == pytest.approx(b0, abs=1e-12)

    def test_decay_rotates_coefficients(self):
        spec = ScenarioSpec(shift=ShiftKind.DECAY, T=100)
        _, beta = original_coefficients(spec)
        _, end = true_coefficients(spec, 100)
        cosine = beta @ end / (np.linalg.norm(beta) * np.linalg.norm(end))
        assert cosine == pytest.approx(0.5, abs=1e-9)
        assert np.linalg.norm(end) == pytest.approx(0.5 * np.linalg.norm(beta))

    def test_decay_lowers_original_auc(self):
        stream = generate(ScenarioSpec(shift=ShiftKind.DECAY, T=200, n=500, seed=3))
        early = auc(np.concatenate([b.original_score for b in stream[:20]]),
                    np.concatenate([b.y for b in stream[:20]]))
        late = auc(np.concatenate([b.original_score for b in stream[-20:]]),
                   np.concatenate([b.y for b in stream[-20:]]))
        assert late < early - 0.05

    def test_decay_original_auc_falls_every_quarter(self):
        stream = generate(ScenarioSpec(shift=ShiftKind.DECAY, T=100, n=100))
        quarters = [stream[k:k + 25] for k in range(0, 100, 25)]
        aucs = [auc(np.concatenate([b.original_score for b in q]), np.concatenate([b.y for b in q]))
                for q in quarters]
        assert np.all(np.diff(aucs) < 0.0)
        assert aucs[0] - aucs[-1] > 0.1

    @pytest.mark.parametrize("scenario,shift", [(1, ShiftKind.INITIAL), (2, ShiftKind.CYCLICAL),
                                                (3, ShiftKind.DECAY)])
    def test_outcomes_match_true_probabilities(self, scenario, shift):
        stream = generate(ScenarioSpec(scenario=scenario, shift=shift, T=60, n=100, seed=1))
        p = np.concatenate([b.true_prob for b in stream])
        y = np.concatenate([b.y for b in stream])
        se = math.sqrt(np.sum(p * (1.0 - p))) / p.size
        assert abs(y.mean() - p.mean()) < 3.0 * se


class TestCorruption:

    def test_window(self):
        spec = ScenarioSpec(scenario=3, T=150)
        assert list(corrupted_steps(spec)) == list(range(80, 100))
        assert list(corrupted_steps(ScenarioSpec(scenario=2, T=150))) == []

    def test_labels_outside_window_are_true(self):
        spec = ScenarioSpec(scenario=3, T=150, n=50)
        stream = generate(spec)
        for batch in stream:
            if batch.t not in corrupted_steps(spec):
                np.testing.assert_array_equal(batch.refit_y, batch.y)

    def test_labels_can_be_regenerated(self):
        spec = ScenarioSpec(scenario=3, T=120, n=200, seed=5)
        batch = generate_batch(spec, 90)
        np.testing.assert_array_equal(refit_labels(spec, 90, batch.y), batch.refit_y)
        assert 0.3 < np.mean(batch.refit_y) < 0.7


class TestOracleTau:

    def test_initial(self):
        assert oracle_tau(ScenarioSpec(shift=ShiftKind.INITIAL)) == [1]

    def test_cyclical(self):
        tau = oracle_tau(ScenarioSpec(shift=ShiftKind.CYCLICAL, T=100, drift_params={"period": 40}))
        assert tau[:3] == [1, 11, 21]
        assert tau == list(range(1, 101, 10))

    def test_decay_grid(self):
        tau = oracle_tau(ScenarioSpec(shift=ShiftKind.DECAY, T=100, drift_params={"tau_grid": 10}))
        assert len(tau) == 10
        assert tau[0] == 1

    def test_short_stream(self):
        assert oracle_tau(ScenarioSpec(shift=ShiftKind.DECAY, T=4)) == [1, 2, 3, 4]
