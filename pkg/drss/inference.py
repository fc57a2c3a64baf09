"""
Variance estimation and confidence intervals for the DR mean estimator.

Plug-in variance from the influence values, normal intervals, and the
propensity-estimation correction to the influence function needed when the
outcome model is misspecified (MCAR, offset logistic and stratified PS).
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import ndtri

from .core import SemiSupervisedSample
from .errors import (
    DimensionMismatch,
    EmptyStratum,
    InvalidAlpha,
    InvalidSpec,
    NonpositivePropensity,
    SingularJacobian,
    UnsupportedAdjustment,
)
from .mean_estimators import MeanEstimate, NuisancePredictions
from .propensity import KnownPropensity, McarPsFit, OffsetLogisticFit, StratifiedPsFit, add_intercept

logger = logging.getLogger(__name__)

MAX_JACOBIAN_CONDITION = 1e12


@dataclass(frozen=True)
class EstimateReport:
    theta: float
    v_hat: float
    ci: Tuple[float, float]
    alpha: float
    n: int
    n_labeled: int
    a_hat_inv: float
    v_hat_adjusted: Optional[float] = None
    ci_adjusted: Optional[Tuple[float, float]] = None
    err_m: Optional[float] = None
    err_pi: Optional[float] = None
    estimator: str = "drss"

    @property
    def se(self) -> float:
        return float(np.sqrt(self.v_hat / self.n))

    @property
    def se_adjusted(self) -> Optional[float]:
        if self.v_hat_adjusted is None:
            return None
        return float(np.sqrt(self.v_hat_adjusted / self.n))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "theta": self.theta,
            "v_hat": self.v_hat,
            "se": self.se,
            "ci": list(self.ci),
            "alpha": self.alpha,
            "n": self.n,
            "n_labeled": self.n_labeled,
            "a_hat_inv": self.a_hat_inv,
            "v_hat_adjusted": self.v_hat_adjusted,
            "ci_adjusted": None if self.ci_adjusted is None else list(self.ci_adjusted),
            "err_m": self.err_m,
            "err_pi": self.err_pi,
        }


def _labeled_outcome(R: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.where(R == 1, np.nan_to_num(Y, nan=0.0), 0.0)


def variance_plugin(m_hat, pi_hat, R, Y, theta: float) -> float:
    """mean((m - theta + R / pi * (Y - m))^2)."""
    m_hat = np.asarray(m_hat, dtype=float)
    pi_hat = np.broadcast_to(np.asarray(pi_hat, dtype=float), m_hat.shape)
    R = np.asarray(R)
    if R.shape != m_hat.shape or np.shape(Y) != m_hat.shape:
        raise DimensionMismatch("variance inputs differ in length")
    if not np.all(pi_hat > 0):
        raise NonpositivePropensity("propensity must be positive")
    residual = np.where(R == 1, _labeled_outcome(R, np.asarray(Y, dtype=float)) - m_hat, 0.0)
    return float(np.mean((m_hat - theta + R * residual / pi_hat) ** 2))


def normal_quantile(probability: float) -> float:
    return float(ndtri(probability))


def confidence_interval(theta: float, v_hat: float, N: int, alpha: float = 0.05) -> Tuple[float, float]:
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if v_hat < 0 or N < 1:
        raise InvalidSpec(f"need v_hat >= 0 and N >= 1, got v_hat={v_hat}, N={N}")
    half_width = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(v_hat / N)
    return float(theta - half_width), float(theta + half_width)


def adjusted_if_mcar(m_hat, pi_hat, R, Y) -> np.ndarray:
    """((R - pi) / pi) * mean(m - R Y / pi); pi may be a scalar or per-row."""
    m_hat = np.asarray(m_hat, dtype=float)
    R = np.asarray(R, dtype=float)
    pi_hat = np.broadcast_to(np.asarray(pi_hat, dtype=float), m_hat.shape)
    if not np.all(pi_hat > 0):
        raise NonpositivePropensity("propensity must be positive")
    drift = np.mean(m_hat - R * _labeled_outcome(R, np.asarray(Y, dtype=float)) / pi_hat)
    return (R - pi_hat) / pi_hat * drift


def _ipw_residual(sample: SemiSupervisedSample, m_hat: np.ndarray, pi_hat: np.ndarray) -> np.ndarray:
    """m - R Y / pi, whose mean estimates E{m_working(X) - m_true(X)}."""
    return m_hat - sample.R * sample.observed_outcome() / pi_hat


def _offset_fits(preds: NuisancePredictions):
    fits = preds.ps_fits
    if not fits or not all(isinstance(fit, OffsetLogisticFit) for fit in fits):
        raise UnsupportedAdjustment("offset-logistic adjustment needs offset-logistic propensity fits")
    if any(fit.penalty is not None for fit in fits):
        raise UnsupportedAdjustment("no adjusted influence function for the penalized offset fit")
    return fits


def adjusted_if_offset_logistic(
    sample: SemiSupervisedSample,
    preds: NuisancePredictions,
    fit: Optional[OffsetLogisticFit] = None,
    m_hat: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Correction (1-pi)(m - RY/pi) x' averaged, times J^-1 x (R - pi).

    J = mean(x x' pi (1 - pi)). Without ``fit`` the cross-fitted predictions
    (each row from its own fold fit) are used throughout.
    """
    if fit is None:
        _offset_fits(preds)
        pi_hat = preds.pi_hat
    else:
        if fit.penalty is not None:
            raise UnsupportedAdjustment("no adjusted influence function for the penalized offset fit")
        pi_hat = fit.predict(sample.X)
    m_hat = preds.m_hat if m_hat is None else np.asarray(m_hat, dtype=float)

    design = add_intercept(sample.X)
    weights = pi_hat * (1.0 - pi_hat)
    jacobian = (design * weights[:, None]).T @ design / sample.n
    condition = np.linalg.cond(jacobian)
    if not np.isfinite(condition) or condition > MAX_JACOBIAN_CONDITION:
        raise SingularJacobian(f"jacobian condition number {condition:.3g}")

    left = design.T @ ((1.0 - pi_hat) * _ipw_residual(sample, m_hat, pi_hat)) / sample.n
    direction = scipy.linalg.solve(jacobian, left, assume_a="sym")
    return (design @ direction) * (sample.R - pi_hat)


def adjusted_if_stratified(
    sample: SemiSupervisedSample,
    preds: NuisancePredictions,
    fit: Optional[StratifiedPsFit] = None,
    m_hat: Optional[np.ndarray] = None,
) -> np.ndarray:
    if sample.delta is None:
        raise EmptyStratum("stratified adjustment needs stratum indicators")
    delta = sample.delta.astype(float)
    share = delta.mean()
    if share in (0.0, 1.0):
        raise EmptyStratum("sample holds a single stratum")

    if fit is None:
        if preds.p_delta_hat is None:
            raise UnsupportedAdjustment("stratified adjustment needs stratified propensity fits")
        p_delta, pi_hat = preds.p_delta_hat, preds.pi_hat
    else:
        p_delta, pi_hat = fit.p_delta(sample.X), fit.predict(sample.X)
    m_hat = preds.m_hat if m_hat is None else np.asarray(m_hat, dtype=float)

    R = sample.R.astype(float)
    pi1 = (delta * R).sum() / delta.sum()
    pi0 = ((1.0 - delta) * R).sum() / (1.0 - delta).sum()
    residual = _ipw_residual(sample, m_hat, pi_hat)
    drift1 = np.mean(p_delta / pi_hat * residual)
    drift0 = np.mean((1.0 - p_delta) / pi_hat * residual)
    return (delta * R / share - pi1) * drift1 + ((1.0 - delta) * R / (1.0 - share) - pi0) * drift0


def adjusted_if(sample: SemiSupervisedSample, preds: NuisancePredictions) -> np.ndarray:
    """Pick the correction matching the propensity fits behind ``preds``."""
    fits = preds.ps_fits
    if fits and all(isinstance(fit, KnownPropensity) for fit in fits):
        return np.zeros(sample.n)
    if fits and all(isinstance(fit, McarPsFit) for fit in fits):
        return adjusted_if_mcar(preds.m_hat, preds.pi_hat, sample.R, sample.Y)
    if fits and all(isinstance(fit, StratifiedPsFit) for fit in fits):
        return adjusted_if_stratified(sample, preds)
    return adjusted_if_offset_logistic(sample, preds)


def err_diagnostics(
    preds: NuisancePredictions,
    true_m: Optional[np.ndarray] = None,
    true_pi: Optional[np.ndarray] = None,
) -> Tuple[Optional[float], Optional[float]]:
    """(mean (m_hat - m)^2, mean (1 - pi / pi_hat)^2); None where no truth is given."""
    err_m = None if true_m is None else float(np.mean((preds.m_hat - np.asarray(true_m, dtype=float)) ** 2))
    err_pi = None if true_pi is None else float(np.mean((1.0 - np.asarray(true_pi, dtype=float) / preds.pi_hat) ** 2))
    return err_m, err_pi


def build_report(
    sample: SemiSupervisedSample,
    estimate: MeanEstimate,
    preds: Optional[NuisancePredictions] = None,
    alpha: float = 0.05,
    adjust: bool = False,
    true_m: Optional[np.ndarray] = None,
    true_pi: Optional[np.ndarray] = None,
) -> EstimateReport:
    """Plug-in variance and CI from ``estimate.psi``, optionally adjusted."""
    v_hat = float(np.mean(estimate.psi**2))
    ci = confidence_interval(estimate.theta, v_hat, sample.n, alpha)
    v_adjusted = ci_adjusted = None
    if adjust:
        if preds is None:
            raise UnsupportedAdjustment("adjusted variance needs cross-fitted nuisance predictions")
        v_adjusted = float(np.mean((estimate.psi + adjusted_if(sample, preds)) ** 2))
        ci_adjusted = confidence_interval(estimate.theta, v_adjusted, sample.n, alpha)

    err_m = err_pi = None
    a_hat_inv = 1.0 / sample.pi_bar
    if preds is not None:
        err_m, err_pi = err_diagnostics(preds, true_m, true_pi)
        a_hat_inv = preds.a_hat_inv
    return EstimateReport(
        estimate.theta, v_hat, ci, alpha, sample.n, sample.n_labeled, a_hat_inv,
        v_adjusted, ci_adjusted, err_m, err_pi, estimate.kind.value,
    )
