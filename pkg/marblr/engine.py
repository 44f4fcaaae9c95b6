"""
MarBLR online filter

Markov-switching Bayesian logistic revision. The state keeps one collapsed
Gaussian per value of the switching indicator W_t; each step mixes the two
branches into a four-component predictive mixture indexed by (w_t, w_{t-1}),
updates every component with one Newton step and a Laplace weight, and
collapses back to two branches. BLR is the special case alpha = delta2 = 0.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from marblr.belief import (LOG_2PI, CollapseMode, GaussianBelief, WeightedComponent,
                           check_mixture_weights, collapse_mixture, gaussian_log_density,
                           inflate)
from marblr.errors import ConfigError, DimensionError
from marblr.history import RunHistory
from marblr.logistic import (LabeledBatch, PredictiveKind, PredictiveMethod, grad_hessian,
                             log_likelihood, newton_step, predictive_probabilities)

logger = logging.getLogger("marblr.engine")

# log-weights further than this below the maximum are treated as zero
UNDERFLOW_GAP = 700.0

BRANCHES = (0, 1)


@dataclass(frozen=True, eq=False)
class MarBLRConfig:
    """
    Prior hyperparameters and numerical options of the filter

    theta_1 ~ N(theta_init, sigma_init); with probability alpha the parameters
    jump at a step, the jump having covariance delta2 times the current one.
    """
    theta_init: np.ndarray
    sigma_init: np.ndarray
    alpha: float = 0.0
    delta2: float = 0.0
    collapse_mode: CollapseMode = CollapseMode.PAPER_FAITHFUL
    predictive_method: PredictiveMethod = field(default_factory=PredictiveMethod)

    def __post_init__(self):
        theta = np.array(self.theta_init, dtype=float).reshape(-1)
        sigma = np.array(self.sigma_init, dtype=float)
        if sigma.ndim == 0:
            sigma = np.eye(theta.size) * float(sigma)
        object.__setattr__(self, "theta_init", theta)
        object.__setattr__(self, "sigma_init", sigma)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "delta2", float(self.delta2))
        self.validate()

    def validate(self) -> None:
        """
        Check the hyperparameters

        Raises:
            ConfigError: if alpha, delta2 or sigma_init are invalid
        """
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (self.delta2 >= 0.0 and math.isfinite(self.delta2)):
            raise ConfigError(f"delta2 must be a finite value >= 0, got {self.delta2}")
        if self.theta_init.size == 0:
            raise ConfigError("theta_init must not be empty")
        try:
            self.prior()
        except (DimensionError, np.linalg.LinAlgError) as e:
            raise ConfigError(f"Invalid prior: {e}") from e

    @classmethod
    def from_dict(cls, configdata: Dict[str, Any]) -> "MarBLRConfig":
        """
        Build a config from a plain dictionary

        Recognized keys: theta_init, sigma_init (matrix) or sigma_init_scale,
        alpha, delta2, collapse_mode ("paper"/"full"), predictive ("probit"/"mc"),
        mc_samples, mc_seed.

        Args:
            configdata: Configuration values

        Returns:
            The validated config
        """
        if "theta_init" not in configdata:
            raise ConfigError("theta_init is required")
        theta = np.array(configdata["theta_init"], dtype=float).reshape(-1)
        if "sigma_init" in configdata:
            sigma = np.array(configdata["sigma_init"], dtype=float)
        else:
            sigma = float(configdata.get("sigma_init_scale", 1.0)) * np.eye(theta.size)
        try:
            collapse = CollapseMode(configdata.get("collapse_mode", "paper"))
            kind = PredictiveKind(configdata.get("predictive", "probit"))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        method = PredictiveMethod(kind,
                                  int(configdata.get("mc_samples", 10000)),
                                  int(configdata.get("mc_seed", 0)))
        return cls(theta, sigma,
                   alpha=configdata.get("alpha", 0.0),
                   delta2=configdata.get("delta2", 0.0),
                   collapse_mode=collapse,
                   predictive_method=method)

    @property
    def dim(self) -> int:
        return self.theta_init.size

    @property
    def is_blr(self) -> bool:
        """True for the non-switching special case"""
        return self.alpha == 0.0 and self.delta2 == 0.0

    def prior(self) -> GaussianBelief:
        return GaussianBelief(self.theta_init, self.sigma_init)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta_init": self.theta_init.tolist(),
            "sigma_init": self.sigma_init.tolist(),
            "alpha": self.alpha,
            "delta2": self.delta2,
            "collapse_mode": str(self.collapse_mode),
            "predictive": str(self.predictive_method.kind),
            "mc_samples": self.predictive_method.samples,
            "mc_seed": self.predictive_method.seed,
        }


@dataclass(frozen=True)
class EngineState:
    """
    Filter state at time t: one weighted belief per branch w in {0, 1}

    log_evidence is log p(y_t | z_t, D^{t-1}), the predictive log-likelihood of
    the whole batch that produced this state (0 for the initial state).
    """
    branches: Tuple[WeightedComponent, WeightedComponent]
    t: int = 1
    log_evidence: float = 0.0

    def __post_init__(self):
        branches = tuple(self.branches)
        if len(branches) != 2:
            raise ValueError(f"Engine state needs exactly two branches, got {len(branches)}")
        if branches[0].belief.dim != branches[1].belief.dim:
            raise DimensionError("Branch beliefs have different dimensions")
        if self.t < 1:
            raise ValueError(f"Time index must be >= 1, got {self.t}")
        check_mixture_weights(branches)
        object.__setattr__(self, "branches", branches)

    @property
    def dim(self) -> int:
        return self.branches[0].belief.dim

    @property
    def weights(self) -> np.ndarray:
        """Branch weights Pr(W_t = w)"""
        return np.array([b.weight for b in self.branches])

    def posterior(self, mode: CollapseMode = CollapseMode.FULL_MOMENT) -> GaussianBelief:
        """
        Single Gaussian summary of the two branches

        Args:
            mode: Collapse mode; FULL_MOMENT gives the exact mixture moments

        Returns:
            The collapsed belief
        """
        return collapse_mixture(self.branches, mode)


@dataclass(frozen=True)
class PredictiveMixture:
    """
    Predictive distribution of theta_t given data up to t-1

    Components are keyed by (w_t, w_{t-1}). Zero-weight components are kept.
    """
    components: Dict[Tuple[int, int], WeightedComponent]

    def __post_init__(self):
        check_mixture_weights(list(self.components.values()))

    def items(self) -> List[Tuple[Tuple[int, int], WeightedComponent]]:
        return sorted(self.components.items())

    def active(self) -> List[WeightedComponent]:
        return [c for _, c in self.items() if not c.inert]


class RunObserver:
    """
    Interface for receiving per-step notifications from a MarBLREngine

    Observers receive immutable states and cannot change the run.
    """

    def on_prediction(self, t: int, probabilities: np.ndarray, state: EngineState) -> None:
        """
        Called after the prequential predictions of step t

        Args:
            t: Time index
            probabilities: Predictions for the batch of step t
            state: State the predictions were made from
        """
        pass

    def on_update(self, t: int, state: EngineState) -> None:
        """
        Called after the state has been updated with the batch of step t

        Args:
            t: Time index of the consumed batch
            state: The updated state
        """
        pass


def init_state(config: MarBLRConfig) -> EngineState:
    """
    Initial state: W_1 = 1 with the prior on branch 1

    Branch 0 carries the same belief with weight 0 so both branches stay
    well defined.

    Args:
        config: Filter configuration

    Returns:
        State at t = 1
    """
    config.validate()
    prior = config.prior()
    return EngineState((WeightedComponent(0.0, prior), WeightedComponent(1.0, prior)), t=1)


def predict_step(state: EngineState, config: MarBLRConfig) -> PredictiveMixture:
    """
    Mix the branches into the predictive distribution of theta_t

    Args:
        state: State at t-1
        config: Filter configuration

    Returns:
        Four-component mixture keyed by (w_t, w_{t-1})
    """
    components = {}
    for w_t in BRANCHES:
        transition = config.alpha if w_t == 1 else 1.0 - config.alpha
        for w_prev in BRANCHES:
            branch = state.branches[w_prev]
            belief = inflate(branch.belief, 1.0 + config.delta2 * w_t)
            components[(w_t, w_prev)] = WeightedComponent(transition * branch.weight, belief)
    return PredictiveMixture(components)


def predict_proba(state: EngineState, config: MarBLRConfig, z_rows: np.ndarray) -> np.ndarray:
    """
    Prequential probabilities for a batch of feature rows

    Args:
        state: State before the batch's outcomes are seen
        config: Filter configuration
        z_rows: n x d feature matrix

    Returns:
        n probabilities, mixture-weighted over the predictive components
    """
    z_rows = np.asarray(z_rows, dtype=float)
    if z_rows.ndim == 1:
        z_rows = z_rows.reshape(1, -1) if z_rows.size else z_rows.reshape(0, state.dim)
    if z_rows.shape[0] and z_rows.shape[1] != state.dim:
        raise DimensionError(f"Features have dimension {z_rows.shape[1]}, state has {state.dim}")
    if z_rows.shape[0] == 0:
        return np.zeros(0)
    mixture = predict_step(state, config)
    probs = np.zeros(z_rows.shape[0])
    for component in mixture.active():
        probs += component.weight * predictive_probabilities(component.belief, z_rows,
                                                             config.predictive_method)
    return np.clip(probs, 0.0, 1.0)


def _laplace_update(prior: GaussianBelief, batch: LabeledBatch) -> Tuple[GaussianBelief, float]:
    """One Newton step from the prior mean and the log Laplace evidence"""
    if batch.n == 0:
        return prior, 0.0
    grad, hess = grad_hessian(batch, prior.mean)
    # the Gaussian log-prior has zero gradient at its own mean
    theta, cov = newton_step(prior.mean, grad, hess - prior.precision())
    posterior = GaussianBelief(theta, cov)
    log_evidence = (0.5 * prior.dim * LOG_2PI + 0.5 * posterior.log_det_cov()
                    + log_likelihood(batch, theta) + gaussian_log_density(theta, prior))
    return posterior, log_evidence


def update_step(state: EngineState, config: MarBLRConfig, batch: LabeledBatch) -> EngineState:
    """
    Condition the state on the batch of time t

    Args:
        state: State at t-1
        config: Filter configuration
        batch: Observations of time t, possibly empty

    Returns:
        State at t

    Raises:
        DimensionError: if the batch features do not have dimension d
        DegenerateUpdateError: if a Newton step meets a degenerate Hessian
    """
    if batch.n and batch.dim != state.dim:
        raise DimensionError(f"Batch features have dimension {batch.dim}, state has {state.dim}")

    mixture = predict_step(state, config)
    keys = [key for key, _ in mixture.items()]
    posteriors: Dict[Tuple[int, int], GaussianBelief] = {}
    log_weights = np.full(len(keys), -np.inf)
    for k, (key, component) in enumerate(mixture.items()):
        if component.inert:
            continue
        posteriors[key], log_evidence = _laplace_update(component.belief, batch)
        log_weights[k] = math.log(component.weight) + log_evidence

    top = np.max(log_weights)
    floored = log_weights < top - UNDERFLOW_GAP
    if np.any(floored & np.isfinite(log_weights)):
        logger.debug(f"t={state.t + 1}: flooring underflowed components "
                     f"{[keys[k] for k in np.flatnonzero(floored & np.isfinite(log_weights))]}")
    # mixture weights sum to one, so this is the batch predictive log-likelihood
    batch_evidence = float(logsumexp(log_weights))
    log_weights[floored] = -np.inf
    weights = np.exp(log_weights - logsumexp(log_weights))
    logger.debug(f"t={state.t + 1}: component log-weights {dict(zip(keys, log_weights.round(4)))}")

    collapsed: List[Optional[GaussianBelief]] = []
    branch_weights = []
    for w_t in BRANCHES:
        parts = [WeightedComponent(min(1.0, weights[k]), posteriors[key])
                 for k, key in enumerate(keys) if key[0] == w_t and weights[k] > 0.0]
        total = sum(p.weight for p in parts)
        branch_weights.append(total)
        collapsed.append(collapse_mixture(parts, config.collapse_mode) if total > 0.0 else None)

    norm = sum(branch_weights)
    branches = []
    for w_t in BRANCHES:
        belief = collapsed[w_t]
        if belief is None:
            # an empty branch inherits the other branch's belief at weight 0
            belief = collapsed[1 - w_t]
        branches.append(WeightedComponent(branch_weights[w_t] / norm, belief))
    return EngineState(tuple(branches), t=state.t + 1, log_evidence=batch_evidence)


def batch_log_predictive(state: EngineState, config: MarBLRConfig, batch: LabeledBatch) -> float:
    """
    Joint predictive log-likelihood log p(y_t | z_t, D^{t-1}) of a whole batch

    Unlike the sum of per-row log predictions, the joint predictive keeps the
    dependence between outcomes that share theta_t. It is the Laplace
    evidence of the predictive mixture, as used for the branch weights.
    """
    return update_step(state, config, batch).log_evidence


class MarBLREngine:
    """
    Stateful driver of the online filter

    Holds the current EngineState and notifies registered RunObserver
    instances after every prediction and update.
    """

    def __init__(self, config: MarBLRConfig):
        config.validate()
        self._config = config
        self._state = init_state(config)
        self._observers: List[RunObserver] = []

    @property
    def config(self) -> MarBLRConfig:
        return self._config

    @property
    def state(self) -> EngineState:
        return self._state

    def reset(self) -> None:
        """Return to the prior"""
        self._state = init_state(self._config)

    def add_observer(self, observer: RunObserver) -> None:
        if observer not in self._observers:
            self._observers.append(observer)

    def remove_observer(self, observer: RunObserver) -> None:
        if observer in self._observers:
            self._observers.remove(observer)

    def _notify(self, event: str, *args) -> None:
        for observer in list(self._observers):
            try:
                getattr(observer, event)(*args)
            except Exception as e:
                logger.error(f"Error notifying observer {observer}: {e}")

    def predict(self, z_rows: np.ndarray) -> np.ndarray:
        """Probabilities for feature rows under the current state"""
        return predict_proba(self._state, self._config, z_rows)

    def update(self, batch: LabeledBatch) -> EngineState:
        """Consume the batch of the current step and advance the state"""
        self._state = update_step(self._state, self._config, batch)
        return self._state

    def step(self, batch: LabeledBatch, history: Optional[RunHistory] = None) -> np.ndarray:
        """
        Predict the batch prequentially, then update on it

        Args:
            batch: Observations of the current step
            history: Optional history to record the step into

        Returns:
            The prequential probabilities
        """
        if batch.n and batch.dim != self._config.dim:
            raise DimensionError(
                f"Batch features have dimension {batch.dim}, engine has {self._config.dim}")
        snapshot = self._state
        t = snapshot.t
        probs = self.predict(batch.z)
        self._notify("on_prediction", t, probs, snapshot)
        updated = self.update(batch)
        if history is not None:
            posterior = updated.posterior(self._config.collapse_mode)
            history.record(t, batch, probs, posterior.mean, posterior.cov, updated.weights,
                           state=snapshot, log_predictive=updated.log_evidence)
        self._notify("on_update", t, updated)
        return probs

    def run(self, stream: Iterable[LabeledBatch], method: Optional[str] = None) -> RunHistory:
        """
        Run the filter over a whole stream

        Args:
            stream: Batches in time order
            method: Name recorded in the history (defaults to blr/marblr)

        Returns:
            The run history
        """
        if method is None:
            method = "blr" if self._config.is_blr else "marblr"
        history = RunHistory(method)
        for batch in stream:
            self.step(batch, history)
        logger.info(f"{method} run finished after {history.T} steps")
        return history


def run_stream(config: MarBLRConfig, stream: Iterable[LabeledBatch],
               hooks: Optional[RunObserver] = None) -> RunHistory:
    """
    Run the filter from the prior over a stream

    Args:
        config: Filter configuration
        stream: Batches in time order, all with feature dimension d
        hooks: Optional observer notified at every step

    Returns:
        RunHistory with prequential probabilities, outcomes, collapsed
        posteriors and branch weights per step
    """
    engine = MarBLREngine(config)
    if hooks is not None:
        engine.add_observer(hooks)
    return engine.run(stream)
