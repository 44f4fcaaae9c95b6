"""
BLR and MarBLR revisers

Thin reviser wrapper around the online filter. The 'blr' method ignores the
switching hyperparameters of the configuration.
"""

import dataclasses
import logging
from typing import Optional

import numpy as np

from marblr.engine import MarBLRConfig, MarBLREngine, RunObserver
from marblr.history import RunHistory
from marblr.logistic import LabeledBatch
from marblr.reviser.reviser import Reviser

logger = logging.getLogger("marblr.reviser.bayesian")


class BayesianReviser(Reviser):
    """
    Bayesian logistic revision, optionally Markov-switching
    """

    def __init__(self, config: MarBLRConfig, method: Optional[str] = None):
        if method == "blr" and not config.is_blr:
            logger.info("blr method: using alpha = delta2 = 0")
            config = dataclasses.replace(config, alpha=0.0, delta2=0.0)
        super().__init__(config, method or ("blr" if config.is_blr else "marblr"))
        self._engine = MarBLREngine(config)

    @property
    def engine(self) -> MarBLREngine:
        return self._engine

    def add_observer(self, observer: RunObserver) -> None:
        self._engine.add_observer(observer)

    def predict(self, z_rows: np.ndarray) -> np.ndarray:
        return self._engine.predict(z_rows)

    def update(self, batch: LabeledBatch) -> None:
        self._engine.update(batch)

    @property
    def theta(self) -> np.ndarray:
        return self._engine.state.posterior(self._config.collapse_mode).mean.copy()

    @property
    def covariance(self) -> np.ndarray:
        return self._engine.state.posterior(self._config.collapse_mode).cov.copy()

    @property
    def branch_weights(self) -> np.ndarray:
        return self._engine.state.weights

    def step(self, batch: LabeledBatch, t: int, history: RunHistory) -> np.ndarray:
        # the engine records the pre-update state with each step
        return self._engine.step(batch, history)


PROVIDES_METHODS = {"blr": BayesianReviser, "marblr": BayesianReviser}
