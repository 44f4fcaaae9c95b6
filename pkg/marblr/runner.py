"""
Run harness

Builds revision-feature streams from simulated or replayed batches, runs
revisers over them and evaluates windowed metrics and regret reports.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from marblr.bounds import (BoundInputs, best_type2_bound_marblr, type1_bound_marblr,
                           type2_bound_blr, type2_bound_marblr)
from marblr.engine import MarBLRConfig
from marblr.features import FeatureMap, FeatureVariant, build_design
from marblr.history import RunHistory
from marblr.logistic import LabeledBatch
from marblr.metrics import (EciMethod, RegretReport, auc, compute_R, eci, nll_series, oracle_nll_series,
                            segment_oracles, type1_regret, type2_regret)
from marblr.refit import RefitManager
from marblr.reviser.bayesian import BayesianReviser
from marblr.reviser.locked import LockedReviser
from marblr.reviser.reviser import Reviser
from marblr.simulation import SimBatch

logger = logging.getLogger("marblr.runner")

DEFAULT_METRIC_WINDOW = 10
MIN_WINDOW_SAMPLES = 20


@dataclass
class RevisionStream:
    """
    Revision-feature batches of a stream

    refit_probabilities holds the refitted model's predictions per step when
    the stream was built with a RefitManager.
    """
    batches: List[LabeledBatch]
    original_scores: List[np.ndarray]
    refit_probabilities: Optional[List[np.ndarray]] = None

    @property
    def T(self) -> int:
        return len(self.batches)

    @property
    def dim(self) -> int:
        return self.batches[0].dim if self.batches else 0


def build_revision_stream(batches: Sequence[SimBatch], fmap: FeatureMap,
                          refit: Optional[RefitManager] = None) -> RevisionStream:
    """
    Turn raw batches into revision features

    The refitted model predicting step t is fitted on the refit labels of
    steps before t only. Its score is the second ensemble input; other
    variants use the original score alone.

    Args:
        batches: Raw batches for t = 1..T
        fmap: Revision feature map
        refit: Refit manager (required for the ENSEMBLE variant)

    Returns:
        RevisionStream
    """
    if fmap.variant is FeatureVariant.ENSEMBLE and refit is None and fmap.n_models > 1:
        raise ValueError("The ensemble variant needs a refit manager")
    raw: List[LabeledBatch] = []
    out, refit_probs = [], []
    for t, batch in enumerate(batches, start=1):
        scores = batch.original_score
        if refit is not None:
            refit.maybe_refit(raw, t)
            refit_score = refit.predict(batch.x) if refit.model_params is not None else batch.original_score
            refit_probs.append(refit_score)
            if fmap.variant is FeatureVariant.ENSEMBLE:
                scores = np.column_stack([batch.original_score, refit_score])
            raw.append(LabeledBatch(batch.x, batch.refit_y))
        z = build_design(fmap, scores, batch.x, batch.group)
        out.append(LabeledBatch(z, batch.y))
    if refit is not None:
        logger.info(f"Built {len(out)} steps with {refit.refits} refits, {len(refit.skipped)} skipped")
    return RevisionStream(out, [b.original_score for b in batches],
                          refit_probs if refit is not None else None)


def run_scenario_stream(reviser: Reviser, batches: Sequence[SimBatch], fmap: FeatureMap,
                        refit: Optional[RefitManager] = None) -> RunHistory:
    """
    Run a reviser over raw batches

    Returns:
        The reviser's RunHistory; its batches are the revision features used
    """
    stream = build_revision_stream(batches, fmap, refit)
    return reviser.run(stream.batches)


def windowed_metrics(probs, outcomes, time_index, T: int, window: int = DEFAULT_METRIC_WINDOW,
                     eci_method: EciMethod = EciMethod()) -> pd.DataFrame:
    """
    Trailing-window ECI and AUC with the per-step NLL

    The window at t covers steps t-window+1..t. Metrics are NaN when the window
    holds fewer than 20 observations or a single outcome class. ECI uses the
    calibration curve of eci_method.

    Returns:
        DataFrame with columns t, eci_window, auc_window, nll
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    probs = np.asarray(probs, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    time_index = np.asarray(time_index, dtype=int)
    losses = nll_series(probs, outcomes)
    rows = []
    for t in range(1, T + 1):
        mask = (time_index > t - window) & (time_index <= t)
        wp, wy = probs[mask], outcomes[mask]
        eci_value = auc_value = np.nan
        if wy.size >= MIN_WINDOW_SAMPLES and 0.0 < wy.mean() < 1.0:
            eci_value = eci(wp, wy, eci_method)
            auc_value = auc(wp, wy)
        step = time_index == t
        rows.append({"t": t, "eci_window": eci_value, "auc_window": auc_value,
                     "nll": float(losses[step].mean()) if np.any(step) else np.nan})
    return pd.DataFrame(rows, columns=["t", "eci_window", "auc_window", "nll"])


def history_metrics(history: RunHistory, window: int = DEFAULT_METRIC_WINDOW,
                    eci_method: EciMethod = EciMethod()) -> pd.DataFrame:
    """windowed_metrics of a run history"""
    return windowed_metrics(history.probabilities(), history.outcomes(), history.time_index(),
                            history.T, window, eci_method)


def summarize_predictions(name: str, probs, outcomes, time_index, T: int,
                          window: int = DEFAULT_METRIC_WINDOW,
                          eci_method: EciMethod = EciMethod()) -> Dict[str, float]:
    """
    Averages of a prediction series

    Returns:
        Mean windowed ECI and AUC (NaN windows ignored) and the overall NLL
    """
    frame = windowed_metrics(probs, outcomes, time_index, T, window, eci_method)
    outcomes = np.asarray(outcomes, dtype=float)
    return {
        "method": name,
        "T": T,
        "observations": int(outcomes.size),
        "average_eci": float(frame["eci_window"].mean()),
        "average_auc": float(frame["auc_window"].mean()),
        "nll": float(nll_series(probs, outcomes).mean()) if outcomes.size else float("nan"),
    }


def summarize(history: RunHistory, window: int = DEFAULT_METRIC_WINDOW,
              eci_method: EciMethod = EciMethod()) -> Dict[str, float]:
    """summarize_predictions of a run history"""
    return summarize_predictions(history.method, history.probabilities(), history.outcomes(),
                                 history.time_index(), history.T, window, eci_method)


def _per_step_means(losses: np.ndarray, time_index: np.ndarray, T: int) -> List[float]:
    return [float(losses[time_index == t].mean()) if np.any(time_index == t) else float("nan")
            for t in range(1, T + 1)]


def regret_report(config: MarBLRConfig, batches: Sequence[LabeledBatch], tau: Sequence[int],
                  tau_prime: Optional[Sequence[int]] = None, c: float = 1.0,
                  method: Optional[str] = None) -> RegretReport:
    """
    Run a Bayesian reviser, the locked model and the segment oracles on one stream

    The reviser is scored by its batched loss, the joint predictive NLL of each
    batch. The BLR Type II bound is reported for alpha = 0 runs only. The
    MarBLR Type II bound needs delta2 > 0; without tau_prime it is minimized
    over subsequences of tau.

    Args:
        config: Reviser configuration (theta_init is also the locked model)
        batches: Revision-feature batches
        tau: Shift times
        tau_prime: Subsequence of tau for the MarBLR bound
        c: Curvature constant, 1 or 0.25
        method: 'blr' or 'marblr' (None: blr when alpha = delta2 = 0)

    Returns:
        RegretReport
    """
    batches = list(batches)
    T = len(batches)
    if T == 0:
        raise ValueError("Cannot evaluate regret on an empty stream")
    reviser = BayesianReviser(config, method=method)
    config = reviser.config
    run = reviser.run(batches)
    locked = LockedReviser(config).run(batches)

    oracles = segment_oracles(batches, tau)
    theta_locked = segment_oracles(batches, [1]).thetas[0]
    inputs = BoundInputs(d=config.dim, n=max(b.n for b in batches), T=T,
                         R=compute_R(batches, tau), trace_sigma=float(np.trace(config.sigma_init)),
                         c=c, alpha=config.alpha, delta2=config.delta2, tau=list(tau),
                         tau_prime=list(tau_prime) if tau_prime is not None else None,
                         theta_init=config.theta_init, sigma_init=config.sigma_init,
                         oracle_thetas=oracles.thetas, theta_locked=theta_locked)

    blr_bound = type2_bound_blr(inputs) if config.alpha == 0.0 else None
    marblr_bound, chosen = None, None
    if config.delta2 > 0.0:
        try:
            if tau_prime is not None:
                marblr_bound, chosen = type2_bound_marblr(inputs), list(inputs.tau_prime)
            else:
                marblr_bound, chosen = best_type2_bound_marblr(inputs)
        except ValueError as e:
            logger.warning(f"MarBLR Type II bound unavailable: {e}")

    time_index = run.time_index()
    r_nll = run.batched_nll_series()
    l_nll = locked.batched_nll_series()
    o_nll = oracle_nll_series(batches, oracles)
    type2, _ = type2_regret(run, batches, tau, oracles)
    report = RegretReport(
        method=run.method,
        type1_empirical=type1_regret(r_nll, l_nll),
        type1_cumulative=max(0.0, float(np.sum(r_nll - l_nll))),
        type1_bound=type1_bound_marblr(inputs),
        type2_empirical=type2,
        type2_cumulative=max(0.0, float(np.sum(r_nll - o_nll))),
        type2_bound_blr=blr_bound,
        type2_bound_marblr=marblr_bound,
        c=c, R=inputs.R, d=inputs.d, n=inputs.n, T=T,
        tau=inputs.tau, tau_prime=chosen,
        oracle_ridge_fallback=oracles.ridge_fallback,
        per_step_nll={
            "reviser": _per_step_means(r_nll, time_index, T),
            "locked": _per_step_means(l_nll, time_index, T),
            "oracle": _per_step_means(o_nll, time_index, T),
        },
    )
    logger.info(f"Regret check for {run.method}: type I {report.type1_empirical:.4g} "
                f"(bound {report.type1_bound_per_obs:.4g}), type II {report.type2_empirical:.4g}")
    return report
