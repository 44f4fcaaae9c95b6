"""
Reviser Abstract Base Class

This module defines the interface shared by all online model revisers and the
discovery of the available implementations.
"""

import importlib
import logging
import os
import pkgutil
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Type

import numpy as np

from marblr.engine import MarBLRConfig
from marblr.history import RunHistory
from marblr.logistic import LabeledBatch

logger = logging.getLogger("marblr.reviser")


class Reviser(ABC):
    """
    Abstract base class for online model revisers.

    A reviser maps revision features z to probabilities and learns from each
    labeled batch after predicting it. Implementation modules in the
    marblr.reviser package declare the method names they provide in a
    PROVIDES_METHODS dict mapping method name to class.
    """

    @classmethod
    def implementations(cls) -> List[str]:
        """
        List all available reviser methods

        Scans the marblr.reviser package for modules that declare
        PROVIDES_METHODS.

        Returns:
            Sorted list of method names usable with create()
        """
        return sorted(cls._method_table())

    @classmethod
    def _method_table(cls) -> Dict[str, Type["Reviser"]]:
        import marblr.reviser
        pkg_dir = os.path.dirname(marblr.reviser.__file__)
        table = {}
        for _, module_name, is_pkg in pkgutil.iter_modules([pkg_dir]):
            if module_name == "reviser" or is_pkg:
                continue
            try:
                module = importlib.import_module(f"marblr.reviser.{module_name}")
            except ImportError as e:
                logger.warning(f"Could not import module marblr.reviser.{module_name}: {e}")
                continue
            for method, reviser_class in getattr(module, "PROVIDES_METHODS", {}).items():
                if issubclass(reviser_class, Reviser):
                    table[method] = reviser_class
        logger.debug(f"Discovered reviser methods: {sorted(table)}")
        return table

    @classmethod
    def create(cls, method: str, config: MarBLRConfig) -> Optional["Reviser"]:
        """
        Create a reviser for a method name

        Args:
            method: Method name (e.g. 'locked', 'blr', 'marblr')
            config: Prior and filter configuration

        Returns:
            Reviser instance, or None if the method is unknown
        """
        reviser_class = cls._method_table().get(method.lower())
        if reviser_class is None:
            logger.error(f"Unknown reviser method {method}")
            return None
        logger.info(f"Creating {method} reviser")
        return reviser_class(config, method=method.lower())

    def __init__(self, config: MarBLRConfig, method: Optional[str] = None):
        """
        Initialize the reviser

        Args:
            config: Prior and filter configuration
            method: Method name recorded in run histories
        """
        self._config = config
        self._method = method or type(self).__name__.lower()

    @property
    def method(self) -> str:
        return self._method

    @property
    def config(self) -> MarBLRConfig:
        return self._config

    @property
    def dim(self) -> int:
        return self._config.dim

    @abstractmethod
    def predict(self, z_rows: np.ndarray) -> np.ndarray:
        """
        Probabilities for feature rows, before their outcomes are known

        Args:
            z_rows: n x d revision features

        Returns:
            n probabilities
        """
        pass

    @abstractmethod
    def update(self, batch: LabeledBatch) -> None:
        """
        Learn from the labeled batch of the current step

        Args:
            batch: Revision features and outcomes
        """
        pass

    @property
    @abstractmethod
    def theta(self) -> np.ndarray:
        """Current point estimate of the revision parameters"""
        pass

    @property
    def covariance(self) -> np.ndarray:
        """Current uncertainty of theta (zeros for point estimators)"""
        return np.zeros((self.dim, self.dim))

    @property
    def branch_weights(self) -> np.ndarray:
        """Switching-branch weights; non-switching revisers stay in the initial W = 1 state"""
        return np.array([0.0, 1.0])

    def step(self, batch: LabeledBatch, t: int, history: RunHistory) -> np.ndarray:
        """
        Predict a batch prequentially, update on it and record the step

        Returns:
            The prequential probabilities
        """
        probs = self.predict(batch.z)
        self.update(batch)
        history.record(t, batch, probs, self.theta, self.covariance, self.branch_weights)
        return probs

    def run(self, stream) -> RunHistory:
        """
        Run over a whole stream of revision-feature batches

        Returns:
            RunHistory of the run
        """
        history = RunHistory(self.method)
        for t, batch in enumerate(stream, start=1):
            self.step(batch, t, history)
        return history
