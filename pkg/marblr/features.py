"""
Revision feature maps

Turns the original model's score (and optionally patient variables, group
membership or further model scores) into the revision feature vector z that
the reviser's logistic model acts on.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy.special import logit

from marblr.errors import ConfigError, DimensionError

logger = logging.getLogger("marblr.features")

DEFAULT_CLIP_EPS = 1e-4


class FeatureVariant(enum.Enum):
    """Revision modes"""
    RECALIBRATE = "recalibrate"                   # [1, logit f]
    SUBGROUP_RECALIBRATE = "subgroup"             # [logit f, group intercepts]
    SUBGROUP_SLOPE = "subgroup-slope"             # [group intercepts, group slopes]
    LOGISTIC_REVISION = "revision"                # [1, logit f, x]
    ENSEMBLE = "ensemble"                         # [1, logit f_1, .., logit f_m]

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class FeatureMap:
    """
    A revision variant with its sizes

    groups is used by the subgroup variants, n_vars by LOGISTIC_REVISION and
    n_models by ENSEMBLE.
    """
    variant: FeatureVariant = FeatureVariant.RECALIBRATE
    groups: int = 2
    n_vars: int = 10
    n_models: int = 2
    logit_clip_eps: float = DEFAULT_CLIP_EPS

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.logit_clip_eps < 0.5:
            raise ConfigError(f"logit_clip_eps must be in (0, 0.5), got {self.logit_clip_eps}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.n_vars < 0:
            raise ConfigError(f"n_vars must be >= 0, got {self.n_vars}")
        if self.n_models < 1:
            raise ConfigError(f"n_models must be >= 1, got {self.n_models}")

    @classmethod
    def from_dict(cls, configdata: Dict[str, Any]) -> "FeatureMap":
        try:
            variant = FeatureVariant(configdata.get("variant", "recalibrate"))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(variant,
                   groups=int(configdata.get("groups", 2)),
                   n_vars=int(configdata.get("n_vars", 10)),
                   n_models=int(configdata.get("n_models", 2)),
                   logit_clip_eps=float(configdata.get("logit_clip_eps", DEFAULT_CLIP_EPS)))

    @property
    def dim(self) -> int:
        """Dimension of the revision features"""
        if self.variant is FeatureVariant.RECALIBRATE:
            return 2
        if self.variant is FeatureVariant.SUBGROUP_RECALIBRATE:
            return self.groups + 1
        if self.variant is FeatureVariant.SUBGROUP_SLOPE:
            return 2 * self.groups
        if self.variant is FeatureVariant.LOGISTIC_REVISION:
            return self.n_vars + 2
        return self.n_models + 1

    @property
    def uses_groups(self) -> bool:
        return self.variant in (FeatureVariant.SUBGROUP_RECALIBRATE, FeatureVariant.SUBGROUP_SLOPE)

    def clipped_logit(self, scores: np.ndarray) -> np.ndarray:
        """logit of scores clipped to [eps, 1 - eps]"""
        scores = np.asarray(scores, dtype=float)
        if np.any(np.isnan(scores)):
            raise ValueError("Scores must not be NaN")
        eps = self.logit_clip_eps
        return logit(np.clip(scores, eps, 1.0 - eps))


def _one_hot(groups: np.ndarray, k: int) -> np.ndarray:
    groups = np.asarray(groups, dtype=float)
    if np.any(np.mod(groups, 1) != 0):
        raise ValueError("Group ids must be integers")
    groups = groups.astype(int)
    if groups.size and (groups.min() < 0 or groups.max() >= k):
        raise ValueError(f"Group ids must be in [0, {k - 1}]")
    return np.eye(k)[groups]


def build_design(fmap: FeatureMap, scores: np.ndarray, x: Optional[np.ndarray] = None,
                 groups: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Revision features for a batch of observations

    Args:
        fmap: Feature map
        scores: n scores of the original model, or n x m scores for ENSEMBLE
        x: n x n_vars patient variables (LOGISTIC_REVISION)
        groups: n group ids in [0, groups) (subgroup variants)

    Returns:
        n x fmap.dim feature matrix
    """
    scores = np.asarray(scores, dtype=float)
    if fmap.variant is FeatureVariant.ENSEMBLE:
        if scores.ndim == 1:
            scores = scores.reshape(-1, fmap.n_models) if scores.size else scores.reshape(0, fmap.n_models)
        if scores.shape[1] != fmap.n_models:
            raise DimensionError(f"Ensemble of {fmap.n_models} models got {scores.shape[1]} scores")
        n = scores.shape[0]
        return np.column_stack([np.ones(n), fmap.clipped_logit(scores)]).reshape(n, fmap.dim)

    scores = scores.reshape(-1)
    n = scores.size
    lg = fmap.clipped_logit(scores)
    if fmap.uses_groups:
        if groups is None:
            raise ValueError(f"Variant {fmap.variant} needs group ids")
        groups = np.asarray(groups).reshape(-1)
        if groups.size != n:
            raise DimensionError(f"{n} scores but {groups.size} group ids")
        onehot = _one_hot(groups, fmap.groups).reshape(n, fmap.groups)
        if fmap.variant is FeatureVariant.SUBGROUP_RECALIBRATE:
            return np.column_stack([lg, onehot]).reshape(n, fmap.dim)
        return np.column_stack([onehot, onehot * lg[:, None]]).reshape(n, fmap.dim)

    if fmap.variant is FeatureVariant.RECALIBRATE:
        return np.column_stack([np.ones(n), lg]).reshape(n, fmap.dim)

    if x is None:
        raise ValueError("Logistic revision needs patient variables")
    x = np.asarray(x, dtype=float).reshape(n, -1) if n else np.zeros((0, fmap.n_vars))
    if x.shape[1] != fmap.n_vars:
        raise DimensionError(f"Expected {fmap.n_vars} patient variables, got {x.shape[1]}")
    return np.column_stack([np.ones(n), lg, x]).reshape(n, fmap.dim)


def build_features(fmap: FeatureMap, scores, x: Optional[np.ndarray] = None,
                   group: Optional[int] = None) -> np.ndarray:
    """
    Revision feature vector of a single observation

    Args:
        fmap: Feature map
        scores: Original score, or m scores for ENSEMBLE
        x: Patient variables (LOGISTIC_REVISION)
        group: Group id (subgroup variants)

    Returns:
        z vector of length fmap.dim
    """
    scores = np.atleast_1d(np.asarray(scores, dtype=float))
    if fmap.variant is FeatureVariant.ENSEMBLE:
        scores = scores.reshape(1, -1)
    x_rows = None if x is None else np.asarray(x, dtype=float).reshape(1, -1)
    groups = None if group is None else np.array([group])
    return build_design(fmap, scores, x_rows, groups)[0]


def identity_revision_theta(fmap: FeatureMap) -> np.ndarray:
    """
    Revision parameters that pass the original score through unchanged

    Args:
        fmap: Feature map

    Returns:
        theta with coefficient 1 on the original model's logit slot(s)
    """
    theta = np.zeros(fmap.dim)
    if fmap.variant is FeatureVariant.SUBGROUP_RECALIBRATE:
        theta[0] = 1.0
    elif fmap.variant is FeatureVariant.SUBGROUP_SLOPE:
        theta[fmap.groups:] = 1.0
    else:
        theta[1] = 1.0
    return theta
