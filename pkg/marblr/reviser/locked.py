"""
Locked reviser

Keeps the revision parameters at theta_init forever.
"""

from typing import Optional

import numpy as np
from scipy.special import expit

from marblr.engine import MarBLRConfig
from marblr.errors import DimensionError
from marblr.logistic import LabeledBatch
from marblr.reviser.reviser import Reviser


class LockedReviser(Reviser):
    """
    Baseline that never learns: p = sigmoid(z^T theta_init)
    """

    def __init__(self, config: MarBLRConfig, method: Optional[str] = None):
        super().__init__(config, method or "locked")

    def predict(self, z_rows: np.ndarray) -> np.ndarray:
        z_rows = np.asarray(z_rows, dtype=float)
        if z_rows.size == 0:
            return np.zeros(0)
        z_rows = z_rows.reshape(-1, z_rows.shape[-1])
        if z_rows.shape[1] != self.dim:
            raise DimensionError(f"Features have dimension {z_rows.shape[1]}, reviser has {self.dim}")
        return expit(z_rows @ self._config.theta_init)

    def update(self, batch: LabeledBatch) -> None:
        pass

    @property
    def theta(self) -> np.ndarray:
        return self._config.theta_init.copy()


PROVIDES_METHODS = {"locked": LockedReviser}
