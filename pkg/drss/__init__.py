"""
Doubly robust semi-supervised estimation of a mean and of an average
treatment effect when the labeling (or treatment) probability decays with N.
"""
__version__ = "0.3.0"

from .ate import AteReport, estimate_ate, repeated_split_ate
from .core import CrossFitPlan, RandomStream, SampleMode, SemiSupervisedSample, make_folds, validate_sample
from .errors import DrssError
from .inference import EstimateReport, adjusted_if, build_report, confidence_interval, variance_plugin
from .linear_models import OutcomeSpec, fit_kernel_ridge, fit_lasso, fit_least_squares, predict
from .mean_estimators import estimate_dr, estimate_ipw, estimate_reg, naive_labeled_mean, run_pipeline
from .propensity import (
    PsSpec,
    fit_mcar,
    fit_offset_logistic_lasso,
    fit_offset_logistic_mle,
    fit_stratified,
    offset_loglik,
    rsc_inequality_check,
)
from .sim import DgpSpec, SimTable, estimation_error_curve, generate, run_campaign, run_setting

__all__ = [
    "__version__",
    "AteReport",
    "CrossFitPlan",
    "DgpSpec",
    "DrssError",
    "EstimateReport",
    "OutcomeSpec",
    "PsSpec",
    "RandomStream",
    "SampleMode",
    "SemiSupervisedSample",
    "SimTable",
    "adjusted_if",
    "build_report",
    "confidence_interval",
    "estimate_ate",
    "estimate_dr",
    "estimate_ipw",
    "estimate_reg",
    "estimation_error_curve",
    "fit_kernel_ridge",
    "fit_lasso",
    "fit_least_squares",
    "fit_mcar",
    "fit_offset_logistic_lasso",
    "fit_offset_logistic_mle",
    "fit_stratified",
    "generate",
    "make_folds",
    "naive_labeled_mean",
    "offset_loglik",
    "predict",
    "repeated_split_ate",
    "rsc_inequality_check",
    "run_campaign",
    "run_pipeline",
    "run_setting",
    "validate_sample",
    "variance_plugin",
]
