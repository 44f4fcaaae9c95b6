"""
Gaussian beliefs and mixture collapsing

This module provides the Gaussian belief value type used for the posterior over
revision parameters, together with the primitives the filter needs: log
densities, covariance inflation and moment-matching collapse of a mixture into
a single Gaussian.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from marblr.errors import DimensionError, NotPositiveDefiniteError

logger = logging.getLogger("marblr.belief")

SYM_TOL = 1e-10
WEIGHT_TOL = 1e-9

LOG_2PI = math.log(2.0 * math.pi)


class CollapseMode(enum.Enum):
    """
    How a Gaussian mixture is merged into a single Gaussian
    """
    PAPER_FAITHFUL = "paper"  # weighted average of means and of covariances
    FULL_MOMENT = "full"      # also adds the spread of the component means

    def __str__(self):
        return self.value


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return (A + A^T) / 2"""
    return 0.5 * (matrix + matrix.T)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """
    Immutable Gaussian N(mean, cov) over a d-dimensional parameter vector

    The covariance is symmetrized on construction and must be positive definite.
    """
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DimensionError(f"Covariance must be square, got shape {cov.shape}")
        if cov.shape[0] != mean.size:
            raise DimensionError(
                f"Mean has length {mean.size} but covariance is {cov.shape[0]}x{cov.shape[1]}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NotPositiveDefiniteError("Belief contains non-finite values")
        cov = symmetrize(cov)
        try:
            chol = scipy.linalg.cholesky(cov, lower=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefiniteError(f"Covariance is not positive definite: {e}") from e

        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "cov", _readonly(cov))
        object.__setattr__(self, "_chol", _readonly(chol))

    @property
    def dim(self) -> int:
        """Dimension d of the parameter vector"""
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance"""
        return self._chol

    def log_det_cov(self) -> float:
        """
        Log determinant of the covariance

        Returns:
            log |cov| computed from the Cholesky factor
        """
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def precision(self) -> np.ndarray:
        """
        Inverse of the covariance

        Returns:
            cov^-1 (symmetrized)
        """
        inv = scipy.linalg.cho_solve((self._chol, True), np.eye(self.dim))
        return symmetrize(inv)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class WeightedComponent:
    """
    A belief with its mixture weight

    Zero-weight components are kept in mixtures but are inert.
    """
    weight: float
    belief: GaussianBelief

    def __post_init__(self):
        weight = float(self.weight)
        if not (-WEIGHT_TOL <= weight <= 1.0 + WEIGHT_TOL) or math.isnan(weight):
            raise ValueError(f"Component weight {weight} outside [0, 1]")
        object.__setattr__(self, "weight", min(1.0, max(0.0, weight)))

    @property
    def inert(self) -> bool:
        """True if the component carries no weight"""
        return self.weight == 0.0


def check_mixture_weights(components: Sequence[WeightedComponent]) -> None:
    """
    Verify that component weights form a distribution

    Args:
        components: Mixture components

    Raises:
        ValueError: if the weights do not sum to 1 within WEIGHT_TOL
    """
    total = sum(c.weight for c in components)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValueError(f"Mixture weights sum to {total!r}, expected 1")


def gaussian_log_density(x: np.ndarray, belief: GaussianBelief) -> float:
    """
    Log density of a Gaussian belief at a point

    Args:
        x: Point of evaluation, length d
        belief: The Gaussian

    Returns:
        log N(x; mean, cov)

    Raises:
        DimensionError: if x does not have length d
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != belief.dim:
        raise DimensionError(f"Point has length {x.size}, belief has dimension {belief.dim}")
    resid = scipy.linalg.solve_triangular(belief.chol, x - belief.mean, lower=True)
    return float(-0.5 * belief.dim * LOG_2PI - 0.5 * belief.log_det_cov() - 0.5 * resid @ resid)


def inflate(belief: GaussianBelief, factor: float) -> GaussianBelief:
    """
    Widen a belief by scaling its covariance

    Args:
        belief: Belief to inflate
        factor: Scale factor for the covariance, at least 1

    Returns:
        Belief with the same mean and covariance factor * cov

    Raises:
        ValueError: if factor < 1
    """
    if not factor >= 1.0:
        raise ValueError(f"Inflation factor must be >= 1, got {factor}")
    if factor == 1.0:
        return belief
    return GaussianBelief(belief.mean, belief.cov * factor)


def collapse_mixture(components: Sequence[WeightedComponent],
                     mode: CollapseMode = CollapseMode.PAPER_FAITHFUL) -> GaussianBelief:
    """
    Merge a Gaussian mixture into a single Gaussian by moment matching

    Weights are renormalized; zero-weight components do not contribute.
    PAPER_FAITHFUL averages means and covariances; FULL_MOMENT also adds the
    between-component spread sum_k w_k (mu_k - mu)(mu_k - mu)^T so the result
    has the exact mixture covariance. Both return the exact mixture mean.

    Args:
        components: Non-empty list of weighted components
        mode: Collapse mode

    Returns:
        The collapsed belief

    Raises:
        ValueError: if the list is empty or all weights are zero
        DimensionError: if components disagree in dimension
    """
    if not components:
        raise ValueError("Cannot collapse an empty mixture")
    total = sum(c.weight for c in components)
    if total <= 0.0:
        raise ValueError("Cannot collapse a mixture whose weights are all zero")

    active = [c for c in components if c.weight > 0.0]
    dims = {c.belief.dim for c in active}
    if len(dims) != 1:
        raise DimensionError(f"Mixture components have different dimensions: {sorted(dims)}")
    if len(active) == 1:
        return active[0].belief

    weights = np.array([c.weight for c in active]) / total
    means = np.stack([c.belief.mean for c in active])
    covs = np.stack([c.belief.cov for c in active])

    mean = weights @ means
    cov = np.einsum("k,kij->ij", weights, covs)
    if mode is CollapseMode.FULL_MOMENT:
        spread = means - mean
        cov = cov + (weights[:, None] * spread).T @ spread
    return GaussianBelief(mean, cov)
