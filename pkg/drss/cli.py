#!/usr/bin/env python3
"""
Command line entry points: simulate, estimate-mean, estimate-ate, fit-ps.

Exit codes: 0 success, 1 usage or configuration error, 2 data or numeric error.
"""
import argparse
import logging
import os
import sys
from contextlib import contextmanager
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .ate import repeated_split_ate
from .config import FIT_PS_MODELS, MODES, RunConfig
from .core import SampleMode, make_folds
from .errors import ConfigError, DrssError
from .inference import build_report
from .io import DataSchema, load_csv, write_json_report
from .linear_models import OutcomeSpec
from .mean_estimators import naive_labeled_mean, run_pipeline
from .propensity import (
    PsSpec,
    fit_mcar,
    fit_offset_logistic_lasso,
    fit_offset_logistic_mle,
    fit_stratified,
)
from .reporting import print_result, print_section
from .sim import NAIVE_CELL, ORACLE_CELL, DgpSpec, EstimatorCell, adjusted_grid, default_grid, run_setting

logger = logging.getLogger(__name__)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises ConfigError instead of exiting on bad usage."""

    def error(self, message):
        raise ConfigError(message)


@contextmanager
def operation(name: str):
    try:
        yield
    except DrssError as err:
        raise err.annotate(operation=name)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run configuration; flags override its values")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--K", type=int, help="cross-fitting folds")
    sub.add_argument("--n-jobs", dest="n_jobs", type=int, help="parallel workers (env DRSS_N_JOBS)")
    sub.add_argument("--out", "--output", dest="output", help="output file")
    sub.add_argument("--log-level", dest="log_level", help="logging level (env DRSS_LOG_LEVEL)")


def _data_inputs(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--input", help="input CSV")
    sub.add_argument("--schema", help="JSON data schema")


def build_parser() -> CliParser:
    parser = CliParser(prog="drss", description="Doubly robust semi-supervised estimation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Monte Carlo campaign for one setting")
    _common(simulate)
    simulate.add_argument("--setting", help="a, b, c, d, e, f or c'")
    simulate.add_argument("--N", type=int)
    simulate.add_argument("--p", type=int)
    simulate.add_argument("--pi", type=float)
    simulate.add_argument("--reps", type=int)
    simulate.add_argument("--s-m", dest="s_m", type=int)
    simulate.add_argument("--s-pi", dest="s_pi", type=int)
    simulate.add_argument("--ps-grid", dest="ps_grid", nargs="+")
    simulate.add_argument("--m-grid", dest="m_grid", nargs="+")
    simulate.add_argument("--adjust", action="store_const", const=True)
    simulate.add_argument("--progress", action="store_const", const=True)

    mean = commands.add_parser("estimate-mean", help="DR mean of a partially labeled outcome")
    _common(mean)
    _data_inputs(mean)
    mean.add_argument("--ps")
    mean.add_argument("--m")
    mean.add_argument("--adjust", action="store_const", const=True)

    ate = commands.add_parser("estimate-ate", help="DR average treatment effect")
    _common(ate)
    _data_inputs(ate)
    ate.add_argument("--ps")
    ate.add_argument("--m1")
    ate.add_argument("--m0")
    ate.add_argument("--B", type=int, help="repeated sample splits")

    fit_ps = commands.add_parser("fit-ps", help="fit a propensity model on the full sample")
    _common(fit_ps)
    _data_inputs(fit_ps)
    fit_ps.add_argument("--model", choices=FIT_PS_MODELS)
    fit_ps.add_argument("--highdim", action="store_const", const=True)
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key) for key in RunConfig.keys() if hasattr(args, key)}
    overrides["mode"] = args.command
    return config.merge(overrides).validate()


def provenance(config: RunConfig) -> Dict[str, Any]:
    return {"version": __version__, "seed": config.seed, "config_sha256": config.digest()}


def _grid(config: RunConfig) -> List[EstimatorCell]:
    if config.ps_grid is not None:
        cells = [EstimatorCell(ps, m) for ps, m in product(config.ps_grid, config.m_grid)]
        return [NAIVE_CELL, ORACLE_CELL] + cells
    if config.adjust:
        return adjusted_grid()
    return default_grid(config.setting, config.p)


def run_simulate(config: RunConfig) -> Dict[str, Any]:
    with operation("sim.run_setting"):
        spec = DgpSpec.from_setting(config.setting, config.N, config.p, config.pi, config.s_m, config.s_pi)
        table = run_setting(
            spec, _grid(config), config.replications, config.alpha, config.seed, config.K,
            config.workers, config.adjust, config.progress,
        )
    print_section(f"SIMULATION {spec.label} ({config.replications} reps)")
    print(table.to_markdown())
    if config.output:
        Path(config.output).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(config.output)
        write_json_report(
            Path(config.output).with_suffix(".json"),
            {"setting": spec.label, "theta0": spec.theta0, "reps": config.replications, "provenance": provenance(config)},
        )
    return {"success": True, "setting": spec.label, "rows": len(table.frame), "output": config.output}


def _load(config: RunConfig, mode: SampleMode):
    schema = DataSchema.from_json(config.schema)
    if schema.mode is not mode:
        raise ConfigError(f"{config.mode} needs a {mode.value} schema, got {schema.mode.value}")
    with operation("io.load_csv"):
        return load_csv(config.input, schema)


def run_estimate_mean(config: RunConfig) -> Dict[str, Any]:
    sample = _load(config, SampleMode.MISSING_DATA)
    with operation("mean_estimators.run_pipeline"):
        plan = make_folds(sample.n, config.K, config.seed)
        preds, estimate = run_pipeline(
            sample, plan, OutcomeSpec.parse(config.m, config.K), _ps_spec(config), config.workers
        )
    with operation("inference.build_report"):
        report = build_report(sample, estimate, preds, config.alpha, config.adjust)
        naive = build_report(sample, naive_labeled_mean(sample), alpha=config.alpha)
    payload = {
        "estimate": report.to_dict(),
        "naive": naive.to_dict(),
        "ps": config.ps,
        "m": config.m,
        "K": config.K,
        "feature_names": list(sample.feature_names or ()),
        "provenance": provenance(config),
    }
    if config.output:
        write_json_report(config.output, payload)
    return {"success": True, "theta": report.theta, "ci": list(report.ci), "n_labeled": report.n_labeled}


def _ps_spec(config: RunConfig) -> PsSpec:
    return PsSpec.parse(config.ps, config.K)


def run_estimate_ate(config: RunConfig) -> Dict[str, Any]:
    sample = _load(config, SampleMode.CAUSAL)
    with operation("ate.repeated_split_ate"):
        report = repeated_split_ate(
            sample, config.B, config.K, config.seed,
            OutcomeSpec.parse(config.m1, config.K), OutcomeSpec.parse(config.m0, config.K),
            _ps_spec(config), config.alpha, config.workers,
        )
    payload = {
        "estimate": report.to_dict(),
        "ps": config.ps,
        "m1": config.m1,
        "m0": config.m0,
        "K": config.K,
        "feature_names": list(sample.feature_names or ()),
        "provenance": provenance(config),
    }
    if config.output:
        write_json_report(config.output, payload)
    return {"success": True, "theta_ate": report.theta_ate, "ci": list(report.ci), "B": report.B}


def run_fit_ps(config: RunConfig) -> Dict[str, Any]:
    schema = DataSchema.from_json(config.schema)
    with operation("io.load_csv"):
        sample = load_csv(config.input, schema)
    with operation(f"propensity.fit[{config.model}]"):
        if config.model == "offset-logistic":
            fit = fit_offset_logistic_mle(sample.X, sample.R)
        elif config.model == "offset-lasso":
            fit = fit_offset_logistic_lasso(sample.X, sample.R, cv_folds=config.K, seed=config.seed)
        elif config.model == "mcar":
            fit = fit_mcar(sample.R)
        else:
            if sample.delta is None:
                raise ConfigError("stratified fits need a 'stratum' column in the schema")
            highdim = config.highdim or config.model == "stratified-lasso"
            fit = fit_stratified(sample.X, sample.R, sample.delta, highdim, config.seed)
    payload = {
        "model": config.model,
        "fit": fit.to_dict(),
        "n": sample.n,
        "n_labeled": sample.n_labeled,
        "feature_names": list(sample.feature_names or ()),
        "provenance": provenance(config),
    }
    if config.output:
        write_json_report(config.output, payload)
    summary = {"success": True, "model": config.model, "n": sample.n, "n_labeled": sample.n_labeled}
    summary.update({k: v for k, v in fit.to_dict().items() if k in ("pi_hat_N", "pi_hat", "pi1", "pi0", "converged")})
    return summary


COMMANDS = {
    "simulate": run_simulate,
    "estimate-mean": run_estimate_mean,
    "estimate-ate": run_estimate_ate,
    "fit-ps": run_fit_ps,
}
assert set(COMMANDS) == set(MODES)


def _configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv("DRSS_LOG_LEVEL") or "WARNING").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise ConfigError(f"unknown log level '{name}'")
    logging.basicConfig(level=name, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging(args.log_level)
        config = build_config(args)
    except ConfigError as err:
        print(f"drss: usage error: {err}", file=sys.stderr)
        return err.exit_code
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    try:
        summary = COMMANDS[config.mode](config)
    except DrssError as err:
        logger.debug("run failed", exc_info=True)
        print_result(config.mode, {"success": False, "error": str(err)})
        return err.exit_code
    print_result(config.mode, summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
