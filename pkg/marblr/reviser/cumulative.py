"""
Cumulative maximum-likelihood reviser

Refits the revision parameters on all data seen so far after every batch.
"""

import logging
from typing import List, Optional

import numpy as np
from scipy.special import expit

from marblr.engine import MarBLRConfig
from marblr.errors import DimensionError
from marblr.logistic import LabeledBatch, fit_mle
from marblr.reviser.reviser import Reviser

logger = logging.getLogger("marblr.reviser.cumulative")

CUMULATIVE_RIDGE = 1e-6


class CumulativeMLEReviser(Reviser):
    """
    Baseline that predicts with the ridge-penalized MLE of all previous batches

    Before any outcome of both classes has been seen it predicts with theta_init.
    """

    def __init__(self, config: MarBLRConfig, method: Optional[str] = None):
        super().__init__(config, method or "cumulative")
        self._seen: List[LabeledBatch] = []
        self._theta = config.theta_init.copy()

    def predict(self, z_rows: np.ndarray) -> np.ndarray:
        z_rows = np.asarray(z_rows, dtype=float)
        if z_rows.size == 0:
            return np.zeros(0)
        z_rows = z_rows.reshape(-1, z_rows.shape[-1])
        if z_rows.shape[1] != self.dim:
            raise DimensionError(f"Features have dimension {z_rows.shape[1]}, reviser has {self.dim}")
        return expit(z_rows @ self._theta)

    def update(self, batch: LabeledBatch) -> None:
        if batch.n == 0:
            return
        self._seen.append(batch)
        pooled = LabeledBatch.concat(self._seen)
        if np.all(pooled.y == pooled.y[0]):
            return
        result = fit_mle([pooled], init=self._theta, ridge=CUMULATIVE_RIDGE)
        if not result.converged:
            logger.debug(f"Cumulative fit on {pooled.n} rows did not converge")
        self._theta = result.theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta.copy()


PROVIDES_METHODS = {"cumulative": CumulativeMLEReviser}
