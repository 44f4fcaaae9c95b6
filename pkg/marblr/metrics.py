"""
Calibration, discrimination and regret metrics

ECI (estimated calibration index), AUC, negative log-likelihoods, the
empirical Type I / Type II regrets with their segment oracles, and the
feature-norm bound R used by the regret bounds.
"""

import enum
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import expit, logit
from sklearn.calibration import calibration_curve as reliability_curve
from sklearn.metrics import roc_auc_score

from marblr.history import NLL_CLIP, RunHistory
from marblr.logistic import LabeledBatch, fit_mle

logger = logging.getLogger("marblr.metrics")

MIN_ECI_SAMPLES = 20
ORACLE_FALLBACK_RIDGE = 1e-8


class DegenerateOutcomeWarning(UserWarning):
    """Outcomes of a metric input hold a single class"""


class EciKind(enum.Enum):
    INTERPOLATED = "interpolated"
    STEP = "step"
    LOGIT_SMOOTH = "logit"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class EciMethod:
    """
    Calibration curve estimator used by eci

    INTERPOLATED joins the (mean prediction, outcome rate) points of `bins`
    equal-count bins; STEP gives every prediction the outcome rate of its own
    bin; LOGIT_SMOOTH fits y on [1, logit p].
    """
    kind: EciKind = EciKind.INTERPOLATED
    bins: int = 10

    def __post_init__(self):
        if not isinstance(self.kind, EciKind):
            raise ValueError(f"Unknown ECI curve {self.kind}")
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")

    @classmethod
    def interpolated(cls, bins: int = 10) -> "EciMethod":
        return cls(EciKind.INTERPOLATED, bins)

    @classmethod
    def step(cls, bins: int = 10) -> "EciMethod":
        return cls(EciKind.STEP, bins)

    @classmethod
    def logit_smooth(cls) -> "EciMethod":
        return cls(EciKind.LOGIT_SMOOTH)

    @classmethod
    def from_name(cls, name: str, bins: int = 10) -> "EciMethod":
        return cls(EciKind(name), bins)


def _pair(probs, outcomes) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    outcomes = np.asarray(outcomes, dtype=float).reshape(-1)
    if probs.size != outcomes.size:
        raise ValueError(f"{probs.size} probabilities but {outcomes.size} outcomes")
    return probs, outcomes


def equal_count_bins(probs: np.ndarray, outcomes: np.ndarray, bins: int) -> List[np.ndarray]:
    """
    Split observations into equal-count bins ordered by probability

    Ties in probability are ordered by outcome, so the split depends only on
    the multiset of (probability, outcome) pairs.

    Returns:
        Index arrays, one per non-empty bin
    """
    order = np.lexsort((outcomes, probs))
    return [idx for idx in np.array_split(order, min(bins, max(order.size, 1))) if idx.size]


def interpolated_curve(probs: np.ndarray, outcomes: np.ndarray, bins: int) -> np.ndarray:
    """
    Binned calibration curve interpolated between bin centers

    The curve passes through (mean prediction, outcome rate) of each
    equal-count bin and is linear in between, constant beyond the outer bins.
    Bins sharing a mean prediction are pooled.

    Returns:
        Estimated outcome rate at each of probs
    """
    parts = equal_count_bins(probs, outcomes, bins)
    centers = np.array([probs[idx].mean() for idx in parts])
    rates = np.array([outcomes[idx].mean() for idx in parts])
    counts = np.array([idx.size for idx in parts], dtype=float)
    xs, inverse = np.unique(centers, return_inverse=True)
    ys = np.bincount(inverse, weights=rates * counts) / np.bincount(inverse, weights=counts)
    return np.interp(probs, xs, ys)


def step_curve(probs: np.ndarray, outcomes: np.ndarray, bins: int) -> np.ndarray:
    """
    Binned calibration curve constant on every equal-count bin

    Returns:
        Outcome rate of the bin holding each of probs
    """
    curve = np.empty(probs.size)
    for idx in equal_count_bins(probs, outcomes, bins):
        curve[idx] = outcomes[idx].mean()
    return curve


def eci(probs, outcomes, method: EciMethod = EciMethod()) -> float:
    """
    Estimated calibration index

    Args:
        probs: Predicted probabilities
        outcomes: Binary outcomes
        method: Calibration curve estimator

    Returns:
        100 times the mean squared difference between the estimated
        calibration curve and the predictions

    Raises:
        ValueError: on length mismatch or fewer than 20 observations
    """
    probs, outcomes = _pair(probs, outcomes)
    if probs.size < MIN_ECI_SAMPLES:
        raise ValueError(f"ECI needs at least {MIN_ECI_SAMPLES} observations, got {probs.size}")
    if np.all(outcomes == outcomes[0]):
        logger.warning("ECI computed on outcomes with a single class")
        warnings.warn("ECI computed on outcomes with a single class", DegenerateOutcomeWarning)

    if method.kind is EciKind.INTERPOLATED:
        curve = interpolated_curve(probs, outcomes, method.bins)
    elif method.kind is EciKind.STEP:
        curve = step_curve(probs, outcomes, method.bins)
    else:
        lg = logit(np.clip(probs, NLL_CLIP, 1.0 - NLL_CLIP))
        design = LabeledBatch(np.column_stack([np.ones(probs.size), lg]), outcomes)
        # ridge keeps single-class fits finite
        result = fit_mle([design], ridge=1e-8)
        curve = expit(design.z @ result.theta)
    return float(100.0 * np.mean((curve - probs) ** 2))


def auc(probs, outcomes) -> float:
    """
    Area under the ROC curve, ties counted as one half

    Raises:
        ValueError: if the outcomes hold a single class
    """
    probs, outcomes = _pair(probs, outcomes)
    if probs.size == 0 or np.all(outcomes == outcomes[0]):
        raise ValueError("AUC needs both outcome classes")
    return float(roc_auc_score(outcomes, probs))


def nll_series(probs, outcomes) -> np.ndarray:
    """Per-observation negative log-likelihood, probabilities clipped to [1e-12, 1 - 1e-12]"""
    probs, outcomes = _pair(probs, outcomes)
    p = np.clip(probs, NLL_CLIP, 1.0 - NLL_CLIP)
    return -(outcomes * np.log(p) + (1.0 - outcomes) * np.log1p(-p))


def cumulative_nll(probs, outcomes) -> float:
    """
    Average negative log-likelihood over all observations

    Returns:
        -(1/nT) sum log p(y_i; p_i), 0 for empty input
    """
    series = nll_series(probs, outcomes)
    return float(series.mean()) if series.size else 0.0


def type1_regret(reviser_nll_series, locked_nll_series) -> float:
    """
    Type I regret: average NLL increase over the locked model, positive part

    Args:
        reviser_nll_series: Per-observation NLL of the reviser
        locked_nll_series: Per-observation NLL of the locked model

    Returns:
        max(0, mean(reviser - locked))
    """
    reviser, locked = _pair(reviser_nll_series, locked_nll_series)
    if reviser.size == 0:
        return 0.0
    return max(0.0, float(np.mean(reviser - locked)))


def check_tau(tau: Sequence[int], T: int) -> List[int]:
    """
    Validate shift times for a stream of length T

    Returns:
        tau as a list of ints

    Raises:
        ValueError: unless tau is strictly increasing, starts at 1 and ends <= T
    """
    tau = [int(v) for v in tau]
    if not tau or tau[0] != 1:
        raise ValueError(f"Shift times must start at 1, got {tau}")
    if any(b <= a for a, b in zip(tau, tau[1:])):
        raise ValueError(f"Shift times must be strictly increasing, got {tau}")
    if tau[-1] > T:
        raise ValueError(f"Shift time {tau[-1]} exceeds stream length {T}")
    return tau


def segments(tau: Sequence[int], T: int) -> List[Tuple[int, int]]:
    """
    Segments [tau_j, tau_{j+1} - 1] of a stream of length T, with tau_{|tau|+1} = T + 1

    Returns:
        List of (first, last) time indices, 1-based and inclusive
    """
    tau = check_tau(tau, T)
    bounds = tau + [T + 1]
    return [(bounds[j], bounds[j + 1] - 1) for j in range(len(tau))]


@dataclass
class SegmentOracles:
    """
    Best parameters in retrospect, one per segment

    ridge_fallback[j] is True where the unpenalized fit did not converge
    (separated segment) and a tiny ridge was used instead.
    """
    tau: List[int]
    thetas: List[np.ndarray]
    ridge_fallback: List[bool]

    def theta_at(self, t: int) -> np.ndarray:
        """Oracle parameters in force at time t"""
        j = int(np.searchsorted(self.tau, t, side="right")) - 1
        return self.thetas[j]


def segment_oracles(data: Sequence[LabeledBatch], tau: Sequence[int]) -> SegmentOracles:
    """
    Fit the maximum-likelihood parameters of every tau-segment

    Args:
        data: Stream of revision-feature batches, t = 1..T
        tau: Shift times

    Returns:
        SegmentOracles
    """
    data = list(data)
    tau = check_tau(tau, len(data))
    thetas, fallback = [], []
    for first, last in segments(tau, len(data)):
        part = data[first - 1:last]
        result = fit_mle(part)
        flagged = False
        if not result.converged:
            logger.warning(f"Segment [{first}, {last}] oracle did not converge, "
                           f"refitting with ridge {ORACLE_FALLBACK_RIDGE}")
            result = fit_mle(part, init=None, ridge=ORACLE_FALLBACK_RIDGE)
            flagged = True
        thetas.append(result.theta)
        fallback.append(flagged)
    return SegmentOracles(tau, thetas, fallback)


def oracle_nll_series(data: Sequence[LabeledBatch], oracles: SegmentOracles) -> np.ndarray:
    """Per-observation NLL of the segment oracles on their own segments"""
    parts = []
    for t, batch in enumerate(data, start=1):
        if batch.n == 0:
            continue
        eta = batch.z @ oracles.theta_at(t)
        signed = np.where(batch.y == 1.0, eta, -eta)
        parts.append(np.logaddexp(0.0, -signed))
    return np.concatenate(parts) if parts else np.zeros(0)


def type2_regret(run: RunHistory, data: Sequence[LabeledBatch], tau: Sequence[int],
                 oracles: Optional[SegmentOracles] = None) -> Tuple[float, List[np.ndarray]]:
    """
    Type II tau-regret: average NLL increase over the segment oracles, positive part

    The reviser is scored by its batched loss, the joint predictive NLL of each
    batch, which equals the per-row NLL for point predictors.

    Args:
        run: History of the reviser on the stream
        data: The revision-feature batches of the run
        tau: Shift times
        oracles: Precomputed oracles for tau (fitted if None)

    Returns:
        (regret, oracle parameters per segment)
    """
    data = list(data)
    if run.T != len(data):
        raise ValueError(f"Run has {run.T} steps but the stream has {len(data)}")
    if oracles is None:
        oracles = segment_oracles(data, tau)
    reviser = run.batched_nll_series()
    oracle = oracle_nll_series(data, oracles)
    if reviser.size == 0:
        return 0.0, oracles.thetas
    return max(0.0, float(np.mean(reviser - oracle))), oracles.thetas


def compute_R(data: Sequence[LabeledBatch], tau: Sequence[int]) -> float:
    """
    Smallest R with segment-averaged Gram matrices bounded by R^2 I

    Args:
        data: Stream of revision-feature batches
        tau: Shift times

    Returns:
        max over segments of sqrt(lambda_max(sum z z^T / count))
    """
    data = list(data)
    best = 0.0
    for first, last in segments(tau, len(data)):
        pooled = LabeledBatch.concat(data[first - 1:last])
        if pooled.n == 0:
            continue
        gram = pooled.z.T @ pooled.z / pooled.n
        top = float(scipy.linalg.eigvalsh(gram)[-1])
        best = max(best, math.sqrt(max(top, 0.0)))
    return best


def calibration_curve(probs, outcomes, time_index, T: int, bins: int = 10) -> pd.DataFrame:
    """
    Quantile-binned calibration curves for the four quarters of a run

    Quarter q holds time steps ((q-1)*ceil(T/4), q*ceil(T/4)]. Each quarter is
    binned by sklearn's quantile reliability curve; empty bins are dropped.

    Args:
        probs: Predicted probabilities
        outcomes: Binary outcomes
        time_index: Time step of every observation
        T: Stream length
        bins: Quantile bins per quarter

    Returns:
        DataFrame with columns quarter, bin, predicted, observed, identity, count
    """
    probs, outcomes = _pair(probs, outcomes)
    time_index = np.asarray(time_index, dtype=int).reshape(-1)
    if time_index.size != probs.size:
        raise ValueError("time_index must have one entry per observation")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    width = math.ceil(T / 4)
    quarter = (time_index - 1) // width + 1
    frames = []
    for q in range(1, 5):
        mask = quarter == q
        if not np.any(mask):
            continue
        qp, qy = probs[mask], outcomes[mask]
        observed, predicted = reliability_curve(qy, qp, n_bins=bins, strategy="quantile")
        # same bin assignment as the quantile strategy
        edges = np.percentile(qp, np.linspace(0.0, 100.0, bins + 1))
        counts = np.bincount(np.searchsorted(edges[1:-1], qp), minlength=bins)
        frames.append(pd.DataFrame({"quarter": q, "bin": np.arange(predicted.size),
                                    "predicted": predicted, "observed": observed,
                                    "identity": predicted, "count": counts[counts > 0]}))
    columns = ["quarter", "bin", "predicted", "observed", "identity", "count"]
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]


@dataclass
class RegretReport:
    """
    Empirical regrets with their theoretical bounds

    Empirical values are per-observation averages (positive parts); the
    *_cumulative fields are the summed NLL differences the regret bounds cover.
    Bounds are cumulative; *_bound_per_obs divides them by n T.
    """
    method: str
    type1_empirical: float
    type1_cumulative: float
    type1_bound: float
    type2_empirical: float
    type2_cumulative: float
    type2_bound_blr: Optional[float]
    type2_bound_marblr: Optional[float]
    c: float
    R: float
    d: int
    n: int
    T: int
    tau: List[int]
    tau_prime: Optional[List[int]]
    oracle_ridge_fallback: List[bool]
    per_step_nll: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.n * self.T

    @property
    def type1_bound_per_obs(self) -> float:
        return self.type1_bound / self.n_obs

    @property
    def type2_bound(self) -> Optional[float]:
        """Tightest Type II bound that applies to the run"""
        candidates = [b for b in (self.type2_bound_blr, self.type2_bound_marblr) if b is not None]
        return min(candidates) if candidates else None

    @property
    def type1_pass(self) -> bool:
        return self.type1_empirical <= self.type1_bound_per_obs

    @property
    def type2_pass(self) -> bool:
        bound = self.type2_bound
        return bound is None or self.type2_empirical <= bound / self.n_obs

    @property
    def passed(self) -> bool:
        return self.type1_pass and self.type2_pass

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["type1_bound_per_obs"] = self.type1_bound_per_obs
        bound = self.type2_bound
        data["type2_bound"] = bound
        data["type2_bound_per_obs"] = None if bound is None else bound / self.n_obs
        data["type1_pass"] = self.type1_pass
        data["type2_pass"] = self.type2_pass
        data["pass"] = self.passed
        return data
