"""
Command-line interface

Subcommands:
    simulate            write a simulated stream CSV
    run                 run a reviser over a simulated or replayed stream
    calibration-curve   per-quarter calibration curves of a completed run
    regret-check        empirical regrets against the theoretical bounds
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from marblr.belief import CollapseMode
from marblr.engine import MarBLRConfig
from marblr.errors import ConfigError, MarblrError
from marblr.features import FeatureMap, FeatureVariant, identity_revision_theta
from marblr.metrics import EciKind, EciMethod, calibration_curve
from marblr.refit import RefitManager, RefitStrategy
from marblr.reviser.reviser import Reviser
from marblr.runner import (DEFAULT_METRIC_WINDOW, build_revision_stream, history_metrics,
                           regret_report, summarize, summarize_predictions)
from marblr.simulation import (ScenarioSpec, ShiftKind, SimBatch, generate, oracle_tau,
                               original_coefficients)
from marblr.streamio import read_stream, write_stream

logger = logging.getLogger("marblr.cli")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_ENV = "MARBLR_LOG"

EXIT_OK = 0
EXIT_BOUND_VIOLATED = 1
EXIT_BAD_INPUT = 2

DEFAULT_VARIANTS = {1: FeatureVariant.SUBGROUP_RECALIBRATE,
                    2: FeatureVariant.LOGISTIC_REVISION,
                    3: FeatureVariant.ENSEMBLE}


def setup_logging() -> None:
    """Configure root logging from MARBLR_LOG (default WARNING)"""
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
        logging.basicConfig(level=level, format=LOG_FORMAT)
        logger.warning(f"Unknown log level {name} in {LOG_ENV}, using WARNING")
        return
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _float_list(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Expected a comma separated list of numbers, got {text!r}") from e


def _int_list(text: Optional[str]) -> Optional[List[int]]:
    values = _float_list(text)
    if values is None:
        return None
    if any(v != int(v) for v in values):
        raise ConfigError(f"Expected a comma separated list of integers, got {text!r}")
    return [int(v) for v in values]


def _write_json(path: str, data: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(data, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info(f"Wrote {path}")


def _write_csv(path: str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {path}")


def spec_from_args(args) -> ScenarioSpec:
    """ScenarioSpec from the simulation flags"""
    drift = {}
    for flag, key in (("period", "period"), ("amplitude", "amplitude"), ("noise_rate", "noise_rate"),
                      ("corrupt_window", "corrupt_window")):
        value = getattr(args, flag, None)
        if value is not None:
            drift[key] = value
    return ScenarioSpec(scenario=args.scenario, shift=ShiftKind(args.shift), T=args.T, n=args.n,
                        d_x=args.d_x, seed=args.seed, drift_params=drift)


@dataclass
class RunConfig:
    """
    Everything a run needs: the stream source, the revision setup and the method

    Exactly one of spec (simulated stream) and stream_path (replayed CSV) is set.
    """
    method: str
    out_dir: str
    spec: Optional[ScenarioSpec] = None
    stream_path: Optional[str] = None
    variant: Optional[FeatureVariant] = None
    engine: Dict[str, Any] = field(default_factory=dict)
    refit: RefitStrategy = RefitStrategy.ALL
    refit_window: int = 20
    metric_window: int = DEFAULT_METRIC_WINDOW
    eci: EciMethod = field(default_factory=EciMethod)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (self.spec is None) == (self.stream_path is None):
            raise ConfigError("Give either a scenario or --stream, not both")
        if self.metric_window < 1:
            raise ConfigError(f"--metric-window must be >= 1, got {self.metric_window}")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        spec = spec_from_args(args) if args.stream is None else None
        engine = {
            "alpha": args.alpha,
            "delta2": args.delta2,
            "sigma_init_scale": args.sigma_init_scale,
            "collapse_mode": args.collapse,
            "predictive": args.predictive,
            "mc_samples": args.mc_samples,
            "mc_seed": args.seed,
        }
        theta = _float_list(args.theta_init)
        if theta is not None:
            engine["theta_init"] = theta
        try:
            eci_method = EciMethod.from_name(args.eci, args.eci_bins)
        except ValueError as e:
            raise ConfigError(f"--eci-bins: {e}") from e
        return cls(method=args.method, out_dir=args.out_dir, spec=spec, stream_path=args.stream,
                   variant=FeatureVariant(args.variant) if args.variant else None, engine=engine,
                   refit=RefitStrategy(args.refit), refit_window=args.window,
                   metric_window=args.metric_window, eci=eci_method)


@dataclass
class PreparedStream:
    """Raw batches with the revision setup derived from them"""
    batches: List[SimBatch]
    spec: Optional[ScenarioSpec]
    fmap: FeatureMap
    config: MarBLRConfig
    refit: Optional[RefitManager]

    def tau(self, given: Optional[List[int]]) -> List[int]:
        if given is not None:
            return given
        if self.spec is None:
            raise ConfigError("--tau is required for streams without a scenario header")
        return oracle_tau(self.spec)


def _original_model_params(spec: Optional[ScenarioSpec]) -> Optional[np.ndarray]:
    if spec is None:
        return None
    intercept, coefficients = original_coefficients(spec)
    return np.concatenate([[intercept], coefficients])


def prepare(run: RunConfig) -> PreparedStream:
    """Load or simulate the stream and derive feature map, prior and refit manager"""
    if run.spec is not None:
        spec, batches = run.spec, generate(run.spec)
    else:
        batches, header = read_stream(run.stream_path)
        spec = ScenarioSpec.from_dict(header["spec"]) if "spec" in header else None
    if not batches:
        raise ConfigError("The stream holds no batches")
    d_x = batches[0].x.shape[1]
    groups = 1 + max((int(b.group.max()) for b in batches if b.group is not None and b.n), default=1)

    variant = run.variant
    if variant is None:
        variant = DEFAULT_VARIANTS[spec.scenario] if spec is not None else FeatureVariant.RECALIBRATE
    fmap = FeatureMap(variant, groups=max(groups, 2), n_vars=d_x, n_models=2)

    refit = None
    if variant is FeatureVariant.ENSEMBLE or (spec is not None and spec.scenario == 3):
        refit = RefitManager(d_x, strategy=run.refit, window=run.refit_window,
                             model_params=_original_model_params(spec))

    engine = dict(run.engine)
    engine.setdefault("theta_init", identity_revision_theta(fmap).tolist())
    if len(engine["theta_init"]) != fmap.dim:
        raise ConfigError(f"--theta-init has {len(engine['theta_init'])} entries, "
                          f"variant {variant} needs {fmap.dim}")
    return PreparedStream(batches, spec, fmap, MarBLRConfig.from_dict(engine), refit)


def cmd_simulate(args) -> int:
    spec = spec_from_args(args)
    batches = generate(spec)
    rows = write_stream(args.out, batches, {"spec": spec.to_dict()})
    print(f"Wrote {rows} rows to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    run = RunConfig.from_args(args)
    prepared = prepare(run)
    stream = build_revision_stream(prepared.batches, prepared.fmap, prepared.refit)

    reviser = Reviser.create(run.method, prepared.config)
    if reviser is None:
        raise ConfigError(f"Unknown method {run.method}; available: {Reviser.implementations()}")
    history = reviser.run(stream.batches)

    os.makedirs(run.out_dir, exist_ok=True)
    _write_csv(os.path.join(run.out_dir, "metrics.csv"),
               history_metrics(history, run.metric_window, run.eci))
    _write_csv(os.path.join(run.out_dir, "params.csv"), history.params_frame())
    _write_csv(os.path.join(run.out_dir, "predictions.csv"), history.predictions_frame())

    summary = {
        "method": history.method,
        "variant": str(prepared.fmap.variant),
        "config": reviser.config.to_dict(),
        "metric_window": run.metric_window,
        "eci": {"curve": str(run.eci.kind), "bins": run.eci.bins},
        "results": summarize(history, run.metric_window, run.eci),
    }
    if prepared.spec is not None:
        summary["spec"] = prepared.spec.to_dict()
    if args.baselines:
        locked = Reviser.create("locked", prepared.config).run(stream.batches)
        summary["locked"] = summarize(locked, run.metric_window, run.eci)
        if stream.refit_probabilities is not None:
            summary["refit"] = summarize_predictions(
                "refit", np.concatenate(stream.refit_probabilities),
                np.concatenate([b.y for b in stream.batches]),
                np.concatenate([np.full(b.n, t) for t, b in enumerate(stream.batches, start=1)]),
                stream.T, run.metric_window, run.eci)
        if run.method in ("blr", "marblr"):
            tau = prepared.tau(_int_list(args.tau))
            report = regret_report(prepared.config, stream.batches, tau,
                                   _int_list(args.tau_prime), args.c, run.method)
            summary["regret"] = report.to_dict()
    _write_json(os.path.join(run.out_dir, "summary.json"), summary)
    return EXIT_OK


def cmd_calibration_curve(args) -> int:
    path = os.path.join(args.run_dir, "predictions.csv")
    if not os.path.exists(path):
        raise ConfigError(f"No completed run in {args.run_dir} (missing predictions.csv)")
    predictions = pd.read_csv(path, float_precision="round_trip")
    if predictions.empty:
        raise ConfigError(f"{path} holds no predictions")
    T = int(predictions["t"].max())
    curve = calibration_curve(predictions["prob"], predictions["y"], predictions["t"], T, args.bins)
    out_dir = args.out_dir or args.run_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "calibration.csv"), curve)
    return EXIT_OK


def cmd_regret_check(args) -> int:
    if args.method not in ("blr", "marblr"):
        raise ConfigError("regret-check supports the blr and marblr methods")
    run = RunConfig.from_args(args)
    prepared = prepare(run)
    stream = build_revision_stream(prepared.batches, prepared.fmap, prepared.refit)
    tau = prepared.tau(_int_list(args.tau))
    report = regret_report(prepared.config, stream.batches, tau, _int_list(args.tau_prime),
                           args.c, run.method)
    os.makedirs(run.out_dir, exist_ok=True)
    _write_json(os.path.join(run.out_dir, "regret.json"), report.to_dict())
    if not report.passed:
        logger.error(f"Empirical regret exceeds its bound: type I pass={report.type1_pass}, "
                     f"type II pass={report.type2_pass}")
        return EXIT_BOUND_VIOLATED
    return EXIT_OK


def _add_stream_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", type=int, choices=[1, 2, 3], default=2, help="Simulation scenario")
    parser.add_argument("--shift", choices=[str(k) for k in ShiftKind], default="initial",
                        help="Drift pattern of scenarios 2 and 3")
    parser.add_argument("--T", type=int, default=100, help="Number of time steps")
    parser.add_argument("--n", type=int, default=100, help="Observations per time step")
    parser.add_argument("--d-x", type=int, default=10, help="Number of patient variables")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--period", type=float, help="Cyclical drift period")
    parser.add_argument("--amplitude", type=float, help="Cyclical drift amplitude")
    parser.add_argument("--noise-rate", type=float, help="Scenario 3 refit label noise rate")
    parser.add_argument("--corrupt-window", type=int, help="Scenario 3 corrupted steps before t=100")


def _add_run_flags(parser: argparse.ArgumentParser, methods: Sequence[str]) -> None:
    _add_stream_flags(parser)
    parser.add_argument("--stream", help="Replay a stream CSV instead of simulating")
    parser.add_argument("--method", choices=list(methods), default="marblr", help="Revision method")
    parser.add_argument("--variant", choices=[str(v) for v in FeatureVariant],
                        help="Revision features (default depends on the scenario)")
    parser.add_argument("--alpha", type=float, default=0.1, help="MarBLR switching probability")
    parser.add_argument("--delta2", type=float, default=0.1, help="MarBLR jump variance scale")
    parser.add_argument("--theta-init", help="Prior mean as a comma separated list")
    parser.add_argument("--sigma-init-scale", type=float, default=1.0, help="Prior covariance scale s (s*I)")
    parser.add_argument("--collapse", choices=[str(m) for m in CollapseMode], default="paper",
                        help="Mixture collapse mode")
    parser.add_argument("--predictive", choices=["probit", "mc"], default="probit",
                        help="Posterior predictive approximation")
    parser.add_argument("--mc-samples", type=int, default=10000, help="Monte Carlo samples")
    parser.add_argument("--refit", choices=[str(s) for s in RefitStrategy], default="all",
                        help="Underlying model refitting strategy")
    parser.add_argument("--window", type=int, default=20, help="Subset refit window (time steps)")
    parser.add_argument("--metric-window", type=int, default=DEFAULT_METRIC_WINDOW,
                        help="Trailing window of the ECI/AUC series")
    parser.add_argument("--eci", choices=[str(k) for k in EciKind], default=str(EciKind.INTERPOLATED),
                        help="Calibration curve used for ECI")
    parser.add_argument("--eci-bins", type=int, default=10, help="Equal-count bins of the binned ECI curves")
    parser.add_argument("--tau", help="Shift times as a comma separated list (default: generator's)")
    parser.add_argument("--tau-prime", help="Subsequence of tau for the MarBLR Type II bound")
    parser.add_argument("--c", type=float, choices=[1.0, 0.25], default=1.0, help="Curvature constant")
    parser.add_argument("-o", "--out-dir", default=".", help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marblr", description="Online Bayesian logistic model revision")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Write a simulated stream CSV")
    _add_stream_flags(simulate)
    simulate.add_argument("-o", "--out", required=True, help="Output CSV file")
    simulate.set_defaults(func=cmd_simulate)

    run = sub.add_parser("run", help="Run a reviser over a stream")
    _add_run_flags(run, Reviser.implementations())
    run.add_argument("--baselines", action="store_true",
                     help="Also evaluate the locked model, the refitted model and the regret report")
    run.set_defaults(func=cmd_run)

    curve = sub.add_parser("calibration-curve", help="Per-quarter calibration curves of a run")
    curve.add_argument("--run-dir", required=True, help="Output directory of a completed run")
    curve.add_argument("--bins", type=int, default=10, help="Equal-count bins per quarter")
    curve.add_argument("-o", "--out-dir", help="Output directory (default: the run directory)")
    curve.set_defaults(func=cmd_calibration_curve)

    regret = sub.add_parser("regret-check", help="Compare empirical regrets with their bounds")
    _add_run_flags(regret, ["blr", "marblr"])
    regret.set_defaults(func=cmd_regret_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MarblrError, ValueError, OSError, KeyError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
