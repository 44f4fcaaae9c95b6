"""
Underlying-model refitting

Keeps a logistic model of the patient variables that is refitted as data
arrives, either on everything seen so far or on a trailing window.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from marblr.errors import ConfigError, DimensionError
from marblr.logistic import LabeledBatch, fit_mle

logger = logging.getLogger("marblr.refit")


class RefitStrategy(enum.Enum):
    ALL = "all"
    SUBSET = "subset"

    def __str__(self):
        return self.value


@dataclass
class RefitManager:
    """
    Refitted logistic model of the patient variables

    model_params holds [intercept, coefficients]. History batches passed to
    maybe_refit carry the raw variables x (no intercept column) as features.
    """
    n_vars: int
    strategy: RefitStrategy = RefitStrategy.ALL
    window: int = 20
    refit_every: int = 1
    ridge: float = 1e-6
    model_params: Optional[np.ndarray] = None
    skipped: List[int] = field(default_factory=list)
    refits: int = 0

    def __post_init__(self):
        if self.model_params is not None:
            self.model_params = np.array(self.model_params, dtype=float).reshape(-1)
        self.validate()

    def validate(self) -> None:
        if self.n_vars < 0:
            raise ConfigError(f"n_vars must be >= 0, got {self.n_vars}")
        if self.window < 1:
            raise ConfigError(f"Refit window must be >= 1, got {self.window}")
        if self.refit_every < 1:
            raise ConfigError(f"refit_every must be >= 1, got {self.refit_every}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.model_params is not None and self.model_params.size != self.n_vars + 1:
            raise DimensionError(
                f"model_params has length {self.model_params.size}, expected {self.n_vars + 1}")

    @classmethod
    def from_dict(cls, configdata: Dict[str, Any]) -> "RefitManager":
        try:
            strategy = RefitStrategy(configdata.get("strategy", "all"))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(int(configdata.get("n_vars", 10)),
                   strategy=strategy,
                   window=int(configdata.get("window", 20)),
                   refit_every=int(configdata.get("refit_every", 1)),
                   ridge=float(configdata.get("ridge", 1e-6)),
                   model_params=configdata.get("model_params"))

    def _design(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.n_vars) if x.size else np.zeros((0, self.n_vars))
        if x.shape[1] != self.n_vars:
            raise DimensionError(f"Expected {self.n_vars} variables, got {x.shape[1]}")
        return np.column_stack([np.ones(x.shape[0]), x])

    def maybe_refit(self, history: Sequence[LabeledBatch], t: int) -> "RefitManager":
        """
        Refit the model if step t is a refit step

        Args:
            history: Raw batches available at step t, oldest first
            t: Time index, >= 1

        Returns:
            This manager, updated in place
        """
        if t < 1:
            raise ValueError(f"Time index must be >= 1, got {t}")
        if t % self.refit_every != 0 or not history:
            return self

        batches = list(history) if self.strategy is RefitStrategy.ALL else list(history)[-self.window:]
        pooled = LabeledBatch.concat(batches)
        if pooled.n == 0 or np.all(pooled.y == pooled.y[0]):
            logger.warning(f"t={t}: refit window holds a single outcome class, keeping previous model")
            self.skipped.append(t)
            return self

        design = LabeledBatch(self._design(pooled.z), pooled.y)
        result = fit_mle([design], init=self.model_params, ridge=self.ridge)
        if not result.converged:
            logger.debug(f"t={t}: refit stopped after {result.iterations} iterations "
                         f"(|grad|_inf={result.final_grad_norm:.3g})")
        self.model_params = result.theta
        self.refits += 1
        logger.debug(f"t={t}: {self.strategy} refit on {pooled.n} rows")
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        """
        Probabilities of the current refitted model

        Args:
            x: n x n_vars patient variables

        Returns:
            n probabilities
        """
        if self.model_params is None:
            raise ValueError("No model has been fitted yet")
        return expit(self._design(x) @ self.model_params)
