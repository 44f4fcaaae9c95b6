"""
Logistic likelihood and solvers

Provides the labeled batch type, the logistic log-likelihood with its gradient
and Hessian, the single penalized Newton step used by the online filter, a
damped Newton maximum-likelihood fitter and the posterior predictive
probability under a Gaussian belief.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.special import expit

from marblr.belief import GaussianBelief, symmetrize
from marblr.errors import DegenerateUpdateError, DimensionError

logger = logging.getLogger("marblr.logistic")

GRAD_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 30
STEP_TOL = 1e-4
ACCEPT_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    """
    n observations (z_i, y_i) observed at one time step

    z is an n x d feature matrix and y holds n binary outcomes. Empty batches
    (n = 0) are allowed.
    """
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(1, -1) if z.size else z.reshape(0, 0)
        y = np.array(self.y, dtype=float).reshape(-1)
        if z.ndim != 2:
            raise DimensionError(f"Features must be a matrix, got shape {z.shape}")
        if z.shape[0] != y.size:
            raise DimensionError(f"Batch has {z.shape[0]} feature rows but {y.size} outcomes")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("Outcomes must be 0 or 1")
        z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, dim: int) -> "LabeledBatch":
        """Batch with no observations and feature dimension dim"""
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def concat(cls, batches: Sequence["LabeledBatch"]) -> "LabeledBatch":
        """
        Pool several batches into one

        Args:
            batches: Batches sharing a feature dimension

        Returns:
            A single batch holding all rows in order
        """
        if not batches:
            raise ValueError("Nothing to concatenate")
        dims = {b.dim for b in batches}
        if len(dims) != 1:
            raise DimensionError(f"Batches have different feature dimensions: {sorted(dims)}")
        return cls(np.vstack([b.z for b in batches]), np.concatenate([b.y for b in batches]))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass
class MleResult:
    """
    Outcome of a maximum-likelihood fit
    """
    theta: np.ndarray
    converged: bool
    iterations: int
    final_grad_norm: float


class PredictiveKind(enum.Enum):
    """Approximation used for E[sigmoid(z^T theta)]"""
    PROBIT = "probit"
    MONTE_CARLO = "mc"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PredictiveMethod:
    """
    Posterior predictive approximation with its settings

    PROBIT is deterministic. MONTE_CARLO averages over `samples` draws from a
    generator seeded with `seed`.
    """
    kind: PredictiveKind = PredictiveKind.PROBIT
    samples: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.kind is PredictiveKind.MONTE_CARLO and self.samples < 1:
            raise ValueError(f"Monte Carlo needs at least one sample, got {self.samples}")

    @classmethod
    def probit(cls) -> "PredictiveMethod":
        return cls(PredictiveKind.PROBIT)

    @classmethod
    def monte_carlo(cls, samples: int, seed: int = 0) -> "PredictiveMethod":
        return cls(PredictiveKind.MONTE_CARLO, samples, seed)


def _check_theta(batch: LabeledBatch, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if batch.z.shape[1] and theta.size != batch.dim:
        raise DimensionError(f"theta has length {theta.size}, features have dimension {batch.dim}")
    return theta


def log_likelihood(batch: LabeledBatch, theta: np.ndarray) -> float:
    """
    Logistic log-likelihood of a batch

    Args:
        batch: Labeled observations
        theta: Parameter vector of length d

    Returns:
        sum_i y_i log p_i + (1 - y_i) log(1 - p_i), 0 for an empty batch
    """
    theta = _check_theta(batch, theta)
    if batch.n == 0:
        return 0.0
    eta = batch.z @ theta
    signed = np.where(batch.y == 1.0, eta, -eta)
    # log sigmoid(s) = -log(1 + e^-s), accurate in both tails
    return float(-np.sum(np.logaddexp(0.0, -signed)))


def grad_hessian(batch: LabeledBatch, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient and Hessian of the logistic log-likelihood

    Args:
        batch: Labeled observations
        theta: Parameter vector of length d

    Returns:
        (sum_i (y_i - p_i) z_i, -sum_i p_i (1 - p_i) z_i z_i^T)
    """
    theta = _check_theta(batch, theta)
    d = theta.size
    if batch.n == 0:
        return np.zeros(d), np.zeros((d, d))
    eta = batch.z @ theta
    p = expit(eta)
    curvature = p * expit(-eta)
    grad = batch.z.T @ (batch.y - p)
    hess = -(batch.z.T * curvature) @ batch.z
    return grad, symmetrize(hess)


def newton_step(theta_prev: np.ndarray, objective_grad: np.ndarray,
                objective_hess: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    One Newton step on a concave penalized objective

    Args:
        theta_prev: Current point
        objective_grad: Gradient of the full objective at theta_prev
        objective_hess: Hessian of the full objective at theta_prev (negative definite)

    Returns:
        (theta_prev - H^-1 g, (-H)^-1), the new mean and the Laplace covariance

    Raises:
        DegenerateUpdateError: if -H is not positive definite
    """
    theta_prev = np.asarray(theta_prev, dtype=float).reshape(-1)
    grad = np.asarray(objective_grad, dtype=float).reshape(-1)
    neg_hess = -symmetrize(np.asarray(objective_hess, dtype=float))
    if neg_hess.shape != (theta_prev.size, theta_prev.size) or grad.size != theta_prev.size:
        raise DimensionError("Newton step inputs have inconsistent dimensions")
    try:
        factor = scipy.linalg.cho_factor(neg_hess, lower=True)
    except np.linalg.LinAlgError as e:
        raise DegenerateUpdateError(f"Hessian is not negative definite: {e}") from e
    theta_new = theta_prev + scipy.linalg.cho_solve(factor, grad)
    cov = symmetrize(scipy.linalg.cho_solve(factor, np.eye(theta_prev.size)))
    return theta_new, cov


def fit_mle(data: Sequence[LabeledBatch], init: Optional[np.ndarray] = None,
            ridge: float = 0.0) -> MleResult:
    """
    Maximize log-likelihood - ridge/2 * |theta|^2 with damped Newton

    The step is halved (at most MAX_HALVINGS times) until the objective does not
    decrease beyond rounding (relative ACCEPT_RTOL). Iteration stops when
    |grad|_inf < GRAD_TOL and the Newton step has settled below STEP_TOL, after
    MAX_ITER iterations, or when the penalized Hessian stops being negative
    definite. On separated data the gradient vanishes while the Newton steps
    stay of order one, so such fits end unconverged at MAX_ITER. Non-convergence
    is reported, not raised.

    Args:
        data: Batches to pool
        init: Starting point (zeros if None)
        ridge: L2 penalty, >= 0

    Returns:
        MleResult with the final iterate
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    pooled = LabeledBatch.concat(list(data))
    if pooled.n == 0:
        raise ValueError("Cannot fit a model on zero observations")
    d = pooled.dim
    theta = np.zeros(d) if init is None else np.array(init, dtype=float).reshape(-1)
    if theta.size != d:
        raise DimensionError(f"init has length {theta.size}, features have dimension {d}")

    def objective(value: np.ndarray) -> float:
        return log_likelihood(pooled, value) - 0.5 * ridge * float(value @ value)

    current = objective(theta)
    grad_norm = math.inf
    for iteration in range(1, MAX_ITER + 1):
        grad, hess = grad_hessian(pooled, theta)
        grad = grad - ridge * theta
        hess = hess - ridge * np.eye(d)
        grad_norm = float(np.max(np.abs(grad)))
        try:
            factor = scipy.linalg.cho_factor(-hess, lower=True)
        except np.linalg.LinAlgError:
            logger.debug(f"Hessian lost definiteness at iteration {iteration}, stopping")
            return MleResult(theta, False, iteration, grad_norm)
        step = scipy.linalg.cho_solve(factor, grad)
        if grad_norm < GRAD_TOL and float(np.max(np.abs(step))) < STEP_TOL:
            return MleResult(theta, True, iteration, grad_norm)

        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta + scale * step
            value = objective(candidate)
            if value >= current - ACCEPT_RTOL * abs(current):
                break
            scale *= 0.5
        else:
            # no ascent possible at working precision
            return MleResult(theta, grad_norm < GRAD_TOL, iteration, grad_norm)
        theta, current = candidate, value

    grad, _ = grad_hessian(pooled, theta)
    grad_norm = float(np.max(np.abs(grad - ridge * theta)))
    logger.debug(f"fit_mle reached {MAX_ITER} iterations, |grad|_inf={grad_norm:.3g}")
    return MleResult(theta, False, MAX_ITER, grad_norm)


def predictive_probabilities(belief: GaussianBelief, z_rows: np.ndarray,
                             method: PredictiveMethod = PredictiveMethod()) -> np.ndarray:
    """
    Posterior predictive E[sigmoid(z^T theta)] for each row under a belief

    Args:
        belief: Gaussian over theta
        z_rows: n x d feature matrix
        method: Approximation to use

    Returns:
        n probabilities
    """
    z_rows = np.asarray(z_rows, dtype=float)
    if z_rows.ndim == 1:
        z_rows = z_rows.reshape(1, -1)
    if z_rows.shape[0] == 0:
        return np.zeros(0)
    if z_rows.shape[1] != belief.dim:
        raise DimensionError(f"Features have dimension {z_rows.shape[1]}, belief has {belief.dim}")

    m = z_rows @ belief.mean
    s2 = np.einsum("ij,jk,ik->i", z_rows, belief.cov, z_rows)
    s2 = np.maximum(s2, 0.0)
    if method.kind is PredictiveKind.PROBIT:
        return expit(m / np.sqrt(1.0 + math.pi * s2 / 8.0))

    # z^T theta is N(m, s2), so one scalar draw per sample suffices
    rng = np.random.default_rng(method.seed)
    eps = rng.standard_normal(method.samples)
    return expit(m[:, None] + np.sqrt(s2)[:, None] * eps[None, :]).mean(axis=1)


def posterior_predictive(belief: GaussianBelief, z: np.ndarray,
                         method: PredictiveMethod = PredictiveMethod()) -> float:
    """
    Posterior predictive probability for a single feature vector

    Args:
        belief: Gaussian over theta
        z: Feature vector of length d
        method: Approximation to use

    Returns:
        Probability in [0, 1]
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != belief.dim:
        raise DimensionError(f"Feature vector has length {z.size}, belief has dimension {belief.dim}")
    return float(predictive_probabilities(belief, z.reshape(1, -1), method)[0])
