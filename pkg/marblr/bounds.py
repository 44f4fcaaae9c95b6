"""
Regret bound evaluators

Closed-form upper bounds on the cumulative log-likelihood regret of MarBLR
against the locked model (Type I) and of BLR and MarBLR against the segment
oracles (Type II).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from marblr.metrics import check_tau

logger = logging.getLogger("marblr.bounds")

# exhaustive search over subsequences of tau up to this length
MAX_SEARCH_TAU = 12


@dataclass
class BoundInputs:
    """
    Everything the bound formulas depend on

    oracle_thetas holds one oracle per tau-segment; theta_locked is the
    maximum-likelihood parameter of the whole stream.
    """
    d: int
    n: int
    T: int
    R: float
    trace_sigma: float
    c: float = 1.0
    alpha: float = 0.0
    delta2: float = 0.0
    tau: List[int] = field(default_factory=lambda: [1])
    tau_prime: Optional[List[int]] = None
    theta_init: Optional[np.ndarray] = None
    sigma_init: Optional[np.ndarray] = None
    oracle_thetas: List[np.ndarray] = field(default_factory=list)
    theta_locked: Optional[np.ndarray] = None

    def __post_init__(self):
        self.tau = check_tau(self.tau, self.T)
        if self.tau_prime is None:
            self.tau_prime = [1]
        self.tau_prime = [int(v) for v in self.tau_prime]
        if self.tau_prime[0] != 1 or not set(self.tau_prime) <= set(self.tau):
            raise ValueError(f"tau_prime {self.tau_prime} must be a subsequence of tau starting at 1")
        if self.tau_prime != sorted(set(self.tau_prime)):
            raise ValueError(f"tau_prime must be strictly increasing, got {self.tau_prime}")
        if min(self.d, self.n, self.T) < 1 or self.R < 0 or self.trace_sigma <= 0 or self.c <= 0:
            raise ValueError("Bound inputs must be positive")
        if not 0.0 <= self.alpha <= 1.0 or self.delta2 < 0:
            raise ValueError(f"Invalid alpha={self.alpha} or delta2={self.delta2}")

    @property
    def curvature(self) -> float:
        """c n R^2, the per-step curvature scale"""
        return self.c * self.n * self.R ** 2

    def prior_precision(self) -> np.ndarray:
        if self.sigma_init is None:
            raise ValueError("sigma_init is required")
        sigma = np.asarray(self.sigma_init, dtype=float)
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(sigma, lower=True), np.eye(self.d))

    def _require_oracles(self) -> None:
        if len(self.oracle_thetas) != len(self.tau):
            raise ValueError(f"Need {len(self.tau)} segment oracles, got {len(self.oracle_thetas)}")
        if self.theta_init is None:
            raise ValueError("theta_init is required")


def _quad(diff: np.ndarray, precision: np.ndarray) -> float:
    return float(diff @ precision @ diff)


def type1_bound_marblr(inp: BoundInputs) -> float:
    """
    Type I bound of MarBLR (BLR for alpha = 0)

    (d/2) log(1 + c n R^2 T tr(S)/d) + (d alpha (T-1)/2) log(1 + delta2 c n R^2 T tr(S)/(2d))
    """
    base = inp.curvature * inp.T * inp.trace_sigma / inp.d
    first = 0.5 * inp.d * math.log1p(base)
    if inp.alpha == 0.0:
        return first
    return first + 0.5 * inp.d * inp.alpha * (inp.T - 1) * math.log1p(inp.delta2 * base / 2.0)


def _drift_term(inp: BoundInputs, reference) -> float:
    """(c n R^2 / 2) sum_j (tau_{j+1} - tau_j) |reference(j) - oracle_j|^2"""
    ends = inp.tau + [inp.T + 1]
    total = 0.0
    for j, theta in enumerate(inp.oracle_thetas):
        diff = np.asarray(reference(j), dtype=float) - np.asarray(theta, dtype=float)
        total += (ends[j + 1] - ends[j]) * float(diff @ diff)
    return 0.5 * inp.curvature * total


def type2_bound_blr(inp: BoundInputs) -> float:
    """
    Type II bound of BLR

    Raises:
        ValueError: if the oracles or the whole-stream fit are missing
    """
    inp._require_oracles()
    if inp.theta_locked is None:
        raise ValueError("theta_locked (whole-stream fit) is required")
    locked = np.asarray(inp.theta_locked, dtype=float)
    diff = locked - np.asarray(inp.theta_init, dtype=float)
    prior_term = 0.5 * _quad(diff, inp.prior_precision())
    log_term = 0.5 * inp.d * math.log((inp.d + inp.curvature * inp.T * inp.trace_sigma) / inp.d)
    return prior_term + log_term + _drift_term(inp, lambda j: locked)


def log_prior_tau_prime(tau_prime: Sequence[int], T: int, alpha: float) -> float:
    """
    log p0 of the switching sequence that jumps exactly at tau_prime[1:]

    W_1 = 1 and W_2..W_T are independent Bernoulli(alpha).

    Returns:
        (|tau'| - 1) log alpha + (T - |tau'|) log(1 - alpha), -inf if impossible
    """
    jumps = len(tau_prime) - 1
    stays = (T - 1) - jumps
    total = 0.0
    for count, p in ((jumps, alpha), (stays, 1.0 - alpha)):
        if count == 0:
            continue
        if p <= 0.0:
            return -math.inf
        total += count * math.log(p)
    return total


def type2_bound_marblr(inp: BoundInputs, tau_prime: Optional[Sequence[int]] = None) -> float:
    """
    Type II bound of MarBLR for a subsequence tau' of tau

    Args:
        inp: Bound inputs
        tau_prime: Subsequence to evaluate (inp.tau_prime if None)

    Raises:
        ValueError: if delta2 is 0, oracles are missing, or tau' has zero prior
            probability (alpha = 0 with |tau'| > 1)
    """
    inp._require_oracles()
    if inp.delta2 <= 0.0:
        raise ValueError("The MarBLR Type II bound needs delta2 > 0")
    tp = list(inp.tau_prime if tau_prime is None else [int(v) for v in tau_prime])
    if tp[0] != 1 or not set(tp) <= set(inp.tau):
        raise ValueError(f"tau_prime {tp} must be a subsequence of tau starting at 1")
    log_p0 = log_prior_tau_prime(tp, inp.T, inp.alpha)
    if math.isinf(log_p0):
        raise ValueError(f"tau_prime {tp} has zero prior probability with alpha={inp.alpha}")

    precision = inp.prior_precision()
    oracle = {t: np.asarray(theta, dtype=float) for t, theta in zip(inp.tau, inp.oracle_thetas)}
    ends = tp + [inp.T + 1]
    d, delta2 = inp.d, inp.delta2
    scale = inp.curvature * inp.trace_sigma / d

    bound = 0.5 * _quad(oracle[1] - np.asarray(inp.theta_init, dtype=float), precision)
    bound += 0.5 * d * math.log(1.0 + 1.0 / delta2 + scale * (ends[1] - ends[0]))
    for k in range(1, len(tp)):
        jump = oracle[tp[k]] - oracle[tp[k - 1]]
        bound += 0.5 * (_quad(jump, precision) / delta2
                        + d * math.log(2.0 / delta2 + scale * (ends[k + 1] - ends[k])))
    bound += -log_p0 + (len(tp) - 1) * d * 0.5 * math.log(delta2)

    # oracle of the nearest preceding tau' time
    anchors = [oracle[tp[int(np.searchsorted(tp, t, side="right")) - 1]] for t in inp.tau]
    return bound + _drift_term(inp, lambda j: anchors[j])


def best_type2_bound_marblr(inp: BoundInputs) -> Tuple[float, List[int]]:
    """
    Minimize the MarBLR Type II bound over subsequences tau' of tau

    All subsequences starting at 1 are tried when |tau| <= MAX_SEARCH_TAU,
    otherwise inp.tau_prime is evaluated alone. Subsequences with zero prior
    probability are skipped.

    Returns:
        (bound, minimizing tau')
    """
    if len(inp.tau) > MAX_SEARCH_TAU:
        return type2_bound_marblr(inp), list(inp.tau_prime)
    best: Tuple[float, List[int]] = (math.inf, [1])
    rest = inp.tau[1:]
    for size in range(len(rest) + 1):
        for combo in itertools.combinations(rest, size):
            candidate = [1] + list(combo)
            if math.isinf(log_prior_tau_prime(candidate, inp.T, inp.alpha)):
                continue
            value = type2_bound_marblr(inp, candidate)
            if value < best[0]:
                best = (value, candidate)
    if math.isinf(best[0]):
        raise ValueError(f"No subsequence of tau has positive prior probability with alpha={inp.alpha}")
    logger.debug(f"Best tau' {best[1]} with bound {best[0]:.4g}")
    return best
