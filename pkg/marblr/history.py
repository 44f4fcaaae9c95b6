"""
Run records for marblr

Per-step records of an online revision run and their JSON/CSV renderings.
"""
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from marblr.logistic import LabeledBatch

NLL_CLIP = 1e-12


def plug_in_log_likelihood(probabilities: np.ndarray, outcomes: np.ndarray) -> float:
    """Log-likelihood of outcomes under fixed probabilities clipped to [1e-12, 1 - 1e-12]"""
    p = np.clip(np.asarray(probabilities, dtype=float), NLL_CLIP, 1.0 - NLL_CLIP)
    y = np.asarray(outcomes, dtype=float)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass
class StepRecord:
    """
    What happened at one time step of a run

    Probabilities are the prequential predictions made before the outcomes of
    the step were seen; the posterior fields describe the state after the
    update with this step's batch.
    log_predictive is the joint predictive log-likelihood of the batch.
    """
    t: int
    probabilities: np.ndarray
    outcomes: np.ndarray
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    branch_weights: np.ndarray
    log_predictive: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "probabilities": self.probabilities.tolist(),
            "outcomes": self.outcomes.astype(int).tolist(),
            "posterior_mean": self.posterior_mean.tolist(),
            "posterior_cov": self.posterior_cov.tolist(),
            "branch_weights": self.branch_weights.tolist(),
            "log_predictive": self.log_predictive,
        }


@dataclass
class RunHistory:
    """
    Complete record of an online revision run

    `batches` holds the revision-feature batches the run consumed, so baselines
    and oracles can be evaluated on exactly the same stream. `states` holds the
    pre-update engine state of each step when the run was driven by the engine.
    """
    method: str
    steps: List[StepRecord] = field(default_factory=list)
    batches: List[LabeledBatch] = field(default_factory=list)
    states: List[Any] = field(default_factory=list)

    def record(self, t: int, batch: LabeledBatch, probabilities: np.ndarray,
               posterior_mean: np.ndarray, posterior_cov: np.ndarray,
               branch_weights: np.ndarray, state: Optional[Any] = None,
               log_predictive: Optional[float] = None) -> StepRecord:
        """
        Append the record of one step

        Args:
            t: Time index (1-based)
            batch: Revision features and outcomes of the step
            probabilities: Predictions made before the outcomes were seen
            posterior_mean: Posterior mean after the update
            posterior_cov: Posterior covariance after the update
            branch_weights: Posterior branch weights after the update
            state: Optional pre-update state snapshot
            log_predictive: Joint predictive log-likelihood of the batch; for
                point predictors (None) the sum of the per-row log-likelihoods

        Returns:
            The new step record
        """
        step = StepRecord(
            t=t,
            probabilities=np.asarray(probabilities, dtype=float).copy(),
            outcomes=np.asarray(batch.y, dtype=float).copy(),
            posterior_mean=np.asarray(posterior_mean, dtype=float).copy(),
            posterior_cov=np.asarray(posterior_cov, dtype=float).copy(),
            branch_weights=np.asarray(branch_weights, dtype=float).copy(),
            log_predictive=(plug_in_log_likelihood(probabilities, batch.y)
                            if log_predictive is None else float(log_predictive)),
        )
        self.steps.append(step)
        self.batches.append(batch)
        if state is not None:
            self.states.append(state)
        return step

    @property
    def T(self) -> int:
        return len(self.steps)

    def probabilities(self) -> np.ndarray:
        """All prequential probabilities in stream order"""
        if not self.steps:
            return np.zeros(0)
        return np.concatenate([s.probabilities for s in self.steps])

    def outcomes(self) -> np.ndarray:
        """All outcomes in stream order"""
        if not self.steps:
            return np.zeros(0)
        return np.concatenate([s.outcomes for s in self.steps])

    def time_index(self) -> np.ndarray:
        """Time index of every observation in stream order"""
        if not self.steps:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.full(s.outcomes.size, s.t, dtype=int) for s in self.steps])

    def batched_nll_series(self) -> np.ndarray:
        """
        Batched loss spread over the observations

        Every observation of step t carries -log p(y_t | z_t, D^{t-1}) / n_t, so
        the series sums to the cumulative batched NLL and aligns with outcomes().
        """
        parts = [np.full(s.outcomes.size, -s.log_predictive / s.outcomes.size)
                 for s in self.steps if s.outcomes.size]
        return np.concatenate(parts) if parts else np.zeros(0)

    def theta_trajectory(self) -> np.ndarray:
        """T x d matrix of posterior means"""
        return np.array([s.posterior_mean for s in self.steps])

    def params_frame(self) -> pd.DataFrame:
        """
        Parameter trajectory table

        Returns:
            DataFrame with columns t, theta_0..theta_{d-1}, weight_0, weight_1
        """
        rows = []
        for step in self.steps:
            row = {"t": step.t}
            row.update({f"theta_{j}": v for j, v in enumerate(step.posterior_mean)})
            row.update({f"weight_{w}": v for w, v in enumerate(step.branch_weights)})
            rows.append(row)
        return pd.DataFrame(rows)

    def predictions_frame(self) -> pd.DataFrame:
        """
        Per-observation predictions

        Returns:
            DataFrame with columns t, i, prob, y
        """
        frames = [
            pd.DataFrame({
                "t": np.full(s.outcomes.size, s.t, dtype=int),
                "i": np.arange(s.outcomes.size, dtype=int),
                "prob": s.probabilities,
                "y": s.outcomes.astype(int),
            })
            for s in self.steps
        ]
        if not frames:
            return pd.DataFrame(columns=["t", "i", "prob", "y"])
        return pd.concat(frames, ignore_index=True)

    def to_json(self) -> str:
        """
        Convert the run to a JSON string

        Returns:
            JSON string with the method name and all step records
        """
        return json.dumps({"method": self.method, "steps": [s.to_dict() for s in self.steps]},
                          sort_keys=True)
