"""
Drift simulator

Seeded generators for the three simulation scenarios: subgroup drift of a fixed
model (scenario 1), drift of a fixed model with ten patient variables
(scenario 2) and drift with a continually refitted underlying model
(scenario 3). Every stream is a pure function of its ScenarioSpec.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.special import expit

from marblr.errors import ConfigError

logger = logging.getLogger("marblr.simulation")


class ShiftKind(enum.Enum):
    INITIAL = "initial"
    CYCLICAL = "cyclical"
    DECAY = "decay"

    def __str__(self):
        return self.value


DEFAULT_DRIFT_PARAMS: Dict[str, float] = {
    "intercept": -1.0,          # original model intercept
    "coef_scale": 0.5,          # |coefficient| of every original model variable
    "shift_intercept": 1.0,     # initial shift: intercept jump
    "shift_coef": 0.5,          # initial shift: jump of the last coefficient
    "amplitude": 1.0,           # cyclical: intercept amplitude
    "period": 40.0,             # cyclical: period in steps
    "rotation_deg": 60.0,       # decay: coefficient rotation reached at t = T
    "shrink": 0.5,              # decay: relative coefficient shrinkage reached at t = T
    "group_drift_a": 1.5,       # scenario 1: group A intercept drift reached at t = T
    "group_drift_b": -0.5,      # scenario 1: group B intercept drift reached at t = T
    "tau_grid": 10,             # shift times reported for gradual drift
    "corrupt_at": 100,          # scenario 3: first step after the refit label corruption
    "corrupt_window": 20,       # scenario 3: corrupted steps before corrupt_at
    "noise_rate": 1.0,          # scenario 3: fraction of corrupted refit labels
}


@dataclass(frozen=True)
class ScenarioSpec:
    """
    Design of a simulated stream

    group_prevalence gives the fractions of groups A and B (scenario 1).
    drift_params overrides entries of DEFAULT_DRIFT_PARAMS.
    """
    scenario: int = 2
    shift: ShiftKind = ShiftKind.INITIAL
    T: int = 100
    n: int = 100
    d_x: int = 10
    seed: int = 0
    group_prevalence: Tuple[float, float] = (0.2, 0.8)
    drift_params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "group_prevalence", tuple(float(p) for p in self.group_prevalence))
        object.__setattr__(self, "drift_params", dict(self.drift_params))
        self.validate()

    def validate(self) -> None:
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"Unknown scenario {self.scenario}")
        if not isinstance(self.shift, ShiftKind):
            raise ConfigError(f"Unknown shift kind {self.shift}")
        if self.T < 1 or self.n < 1 or self.d_x < 1:
            raise ConfigError(f"T, n and d_x must be >= 1, got T={self.T}, n={self.n}, d_x={self.d_x}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        p_a, p_b = self.group_prevalence
        if not (0.0 < p_a < 1.0 and abs(p_a + p_b - 1.0) < 1e-12):
            raise ConfigError(f"Group prevalences must be in (0, 1) and sum to 1, got {self.group_prevalence}")
        unknown = set(self.drift_params) - set(DEFAULT_DRIFT_PARAMS)
        if unknown:
            raise ConfigError(f"Unknown drift parameters: {sorted(unknown)}")
        if self.param("period") <= 0:
            raise ConfigError(f"period must be > 0, got {self.param('period')}")
        if not 0.0 <= self.param("shrink") < 1.0:
            raise ConfigError(f"shrink must be in [0, 1), got {self.param('shrink')}")
        if not 0.0 <= self.param("noise_rate") <= 1.0:
            raise ConfigError(f"noise_rate must be in [0, 1], got {self.param('noise_rate')}")
        if self.param("tau_grid") < 1 or self.param("corrupt_window") < 0:
            raise ConfigError("tau_grid must be >= 1 and corrupt_window >= 0")
        if not all(math.isfinite(float(v)) for v in self.drift_params.values()):
            raise ConfigError("Drift parameters must be finite")

    @classmethod
    def from_dict(cls, configdata: Dict[str, Any]) -> "ScenarioSpec":
        try:
            shift = ShiftKind(configdata.get("shift", "initial"))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(scenario=int(configdata.get("scenario", 2)),
                   shift=shift,
                   T=int(configdata.get("T", 100)),
                   n=int(configdata.get("n", 100)),
                   d_x=int(configdata.get("d_x", 10)),
                   seed=int(configdata.get("seed", 0)),
                   group_prevalence=tuple(configdata.get("group_prevalence", (0.2, 0.8))),
                   drift_params={k: float(v) for k, v in configdata.get("drift_params", {}).items()})

    def param(self, name: str) -> float:
        return float(self.drift_params.get(name, DEFAULT_DRIFT_PARAMS[name]))

    def to_dict(self) -> Dict[str, Any]:
        """Provenance record, including the effective drift parameters"""
        return {
            "scenario": self.scenario,
            "shift": str(self.shift),
            "T": self.T,
            "n": self.n,
            "d_x": self.d_x,
            "seed": self.seed,
            "group_prevalence": list(self.group_prevalence),
            "drift_params": {k: self.param(k) for k in sorted(DEFAULT_DRIFT_PARAMS)},
        }


@dataclass(frozen=True, eq=False)
class SimBatch:
    """
    Observations of one time step

    refit_y are the labels the refitted model of scenario 3 is trained on;
    they equal y outside the corruption window.
    """
    t: int
    x: np.ndarray
    group: Optional[np.ndarray]
    true_prob: np.ndarray
    y: np.ndarray
    original_score: np.ndarray
    refit_y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size


def original_coefficients(spec: ScenarioSpec) -> Tuple[float, np.ndarray]:
    """
    The original model, which is the data-generating model at t = 0

    Returns:
        (intercept, coefficients) with alternating coefficient signs
    """
    signs = np.where(np.arange(spec.d_x) % 2 == 0, 1.0, -1.0)
    return spec.param("intercept"), spec.param("coef_scale") * signs


def _orthogonal_direction(beta: np.ndarray) -> np.ndarray:
    unit = beta / np.linalg.norm(beta)
    for candidate in [np.ones(beta.size)] + list(np.eye(beta.size)):
        v = candidate - (candidate @ unit) * unit
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm
    return np.zeros(beta.size)


def true_coefficients(spec: ScenarioSpec, t: int) -> Tuple[float, np.ndarray]:
    """
    Data-generating parameters at time t, without group effects

    Args:
        spec: Scenario design
        t: Time index (0 gives the original model)

    Returns:
        (intercept, coefficients)
    """
    b0, beta = original_coefficients(spec)
    if t <= 0 or spec.scenario == 1:
        return b0, beta
    if spec.shift is ShiftKind.INITIAL:
        beta = beta.copy()
        beta[-1] += spec.param("shift_coef")
        return b0 + spec.param("shift_intercept"), beta
    if spec.shift is ShiftKind.CYCLICAL:
        return b0 + spec.param("amplitude") * math.sin(2.0 * math.pi * t / spec.param("period")), beta

    frac = min(t, spec.T) / spec.T
    angle = math.radians(spec.param("rotation_deg")) * frac
    scale = 1.0 - spec.param("shrink") * frac
    norm = np.linalg.norm(beta)
    rotated = math.cos(angle) * beta + math.sin(angle) * norm * _orthogonal_direction(beta)
    return b0, scale * rotated


def group_offsets(spec: ScenarioSpec, t: int) -> np.ndarray:
    """Scenario-1 intercept offsets of groups A and B at time t"""
    frac = min(max(t, 0), spec.T) / spec.T
    return frac * np.array([spec.param("group_drift_a"), spec.param("group_drift_b")])


def corrupted_steps(spec: ScenarioSpec) -> range:
    """Steps whose refit labels are corrupted (scenario 3 only)"""
    if spec.scenario != 3 or spec.param("noise_rate") == 0.0:
        return range(0)
    end = int(spec.param("corrupt_at"))
    start = max(1, end - int(spec.param("corrupt_window")))
    return range(start, min(end, spec.T + 1))


def refit_labels(spec: ScenarioSpec, t: int, y: np.ndarray) -> np.ndarray:
    """
    Labels used to refit the underlying model at step t

    The noise draws come from a generator seeded with (seed, t, 1), so the
    labels can be regenerated from a replayed stream.

    Args:
        spec: Scenario design
        t: Time index
        y: True outcomes of step t

    Returns:
        y with a noise_rate fraction replaced by fair coin flips inside the
        corruption window, y otherwise
    """
    y = np.asarray(y, dtype=float)
    if t not in corrupted_steps(spec):
        return y.copy()
    rng = np.random.default_rng([spec.seed, t, 1])
    hit = rng.random(y.size) < spec.param("noise_rate")
    coin = (rng.random(y.size) < 0.5).astype(float)
    return np.where(hit, coin, y)


def generate_batch(spec: ScenarioSpec, t: int) -> SimBatch:
    """The batch of time t"""
    rng = np.random.default_rng([spec.seed, t])
    x = rng.standard_normal((spec.n, spec.d_x))
    group = None
    b0, beta = true_coefficients(spec, t)
    eta = b0 + x @ beta
    if spec.scenario == 1:
        group = np.where(rng.random(spec.n) < spec.group_prevalence[0], 0, 1)
        eta = eta + group_offsets(spec, t)[group]
    true_prob = expit(eta)
    y = (rng.random(spec.n) < true_prob).astype(float)

    o0, obeta = original_coefficients(spec)
    original = expit(o0 + x @ obeta)
    return SimBatch(t, x, group, true_prob, y, original, refit_labels(spec, t, y))


def generate(spec: ScenarioSpec) -> List[SimBatch]:
    """
    Simulate a whole stream

    Args:
        spec: Scenario design

    Returns:
        T batches for t = 1..T
    """
    spec.validate()
    stream = [generate_batch(spec, t) for t in range(1, spec.T + 1)]
    logger.info(f"Simulated scenario {spec.scenario} ({spec.shift}) with T={spec.T}, n={spec.n}")
    return stream


def oracle_tau(spec: ScenarioSpec) -> List[int]:
    """
    Parameter change times of the generator

    Gradual drift (decay and scenario 1) changes every step; it is reported on a
    grid of tau_grid equally spaced times.

    Returns:
        Strictly increasing times starting at 1
    """
    if spec.scenario != 1 and spec.shift is ShiftKind.INITIAL:
        return [1]
    if spec.scenario != 1 and spec.shift is ShiftKind.CYCLICAL:
        step = max(1, int(round(spec.param("period") / 4.0)))
        return list(range(1, spec.T + 1, step))
    grid = int(spec.param("tau_grid"))
    if spec.T <= grid:
        return list(range(1, spec.T + 1))
    return [1 + k * (spec.T // grid) for k in range(grid)]
