"""
Point estimators for the outcome mean under semi-supervised labeling.

Naive labeled mean, regression, IPW and the cross-fitted doubly robust
estimator, each returned with its per-observation influence values.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .core import CrossFitPlan, RandomStream, SemiSupervisedSample, _frozen
from .errors import (
    DimensionMismatch,
    DrssError,
    EmptyLabeledSet,
    InvalidSpec,
    NoLabeledInTrainingFold,
    NonpositivePropensity,
)
from .linear_models import OutcomeSpec
from .propensity import PsSpec, StratifiedPsFit

logger = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    NAIVE = "naive"
    REG = "reg"
    IPW = "ipw"
    DR_KNOWN_PS = "dr_known_ps"
    DRSS = "drss"


@dataclass(frozen=True, eq=False)
class MeanEstimate:
    """theta plus psi, the centered influence values at the plug-in nuisances."""

    theta: float
    psi: np.ndarray
    kind: EstimatorKind

    def __post_init__(self):
        object.__setattr__(self, "psi", _frozen(self.psi))


@dataclass(frozen=True, eq=False)
class CrossFitted:
    """Out-of-fold predictions of one nuisance, with the fitted model per fold."""

    values: np.ndarray
    fits: Tuple
    p_delta: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class NuisancePredictions:
    m_hat: np.ndarray
    pi_hat: np.ndarray
    fold_of: np.ndarray
    outcome_fits: Tuple = ()
    ps_fits: Tuple = ()
    p_delta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("m_hat", "pi_hat", "fold_of"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.fold_of.shape[0]
        if self.m_hat.shape != (n,) or self.pi_hat.shape != (n,):
            raise DimensionMismatch("nuisance prediction vectors differ in length")
        _check_propensity(self.pi_hat)
        if not np.all(np.isfinite(self.m_hat)):
            raise DimensionMismatch("non-finite outcome prediction", row=int(np.flatnonzero(~np.isfinite(self.m_hat))[0]))

    @classmethod
    def combine(cls, plan: CrossFitPlan, outcome: CrossFitted, propensity: CrossFitted) -> "NuisancePredictions":
        return cls(
            outcome.values, propensity.values, plan.assignment,
            outcome.fits, propensity.fits, propensity.p_delta,
        )

    @property
    def a_hat_inv(self) -> float:
        """Plug-in inverse effective-sample fraction mean(1 / pi_hat)."""
        return float(np.mean(1.0 / self.pi_hat))


def _vector(values, n: int, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.shape[0] != n:
        raise DimensionMismatch(f"{name} has shape {values.shape}, expected ({n},)")
    return values


def _check_propensity(pi_hat: np.ndarray) -> None:
    bad = np.flatnonzero(~(pi_hat > 0))
    if bad.size:
        raise NonpositivePropensity(f"propensity {pi_hat[bad[0]]} is not positive", row=int(bad[0]))


def naive_labeled_mean(sample: SemiSupervisedSample) -> MeanEstimate:
    """Mean of the labeled outcomes; psi = (R / pi_bar)(Y - theta)."""
    if sample.n_labeled == 0:
        raise EmptyLabeledSet("no labeled observations")
    observed = sample.observed_outcome()
    theta = float(observed.sum() / sample.n_labeled)
    psi = sample.R * (observed - theta) / sample.pi_bar
    return MeanEstimate(theta, psi, EstimatorKind.NAIVE)


def estimate_reg(sample: SemiSupervisedSample, m_hat) -> MeanEstimate:
    m_hat = _vector(m_hat, sample.n, "m_hat")
    theta = float(m_hat.mean())
    return MeanEstimate(theta, m_hat - theta, EstimatorKind.REG)


def estimate_ipw(sample: SemiSupervisedSample, pi_hat) -> MeanEstimate:
    pi_hat = _vector(pi_hat, sample.n, "pi_hat")
    _check_propensity(pi_hat)
    weighted = sample.R * sample.observed_outcome() / pi_hat
    theta = float(weighted.mean())
    return MeanEstimate(theta, weighted - theta, EstimatorKind.IPW)


def dr_scores(sample: SemiSupervisedSample, m_hat: np.ndarray, pi_hat: np.ndarray) -> np.ndarray:
    """m + R / pi * (Y - m), row by row; unlabeled rows contribute m only."""
    residual = np.where(sample.labeled, sample.observed_outcome() - m_hat, 0.0)
    return m_hat + sample.R * residual / pi_hat


def estimate_dr(sample: SemiSupervisedSample, m_hat, pi_hat, known_ps: bool = False) -> MeanEstimate:
    """Doubly robust mean; ``known_ps`` marks the true propensity being plugged in."""
    m_hat = _vector(m_hat, sample.n, "m_hat")
    pi_hat = _vector(pi_hat, sample.n, "pi_hat")
    _check_propensity(pi_hat)
    scores = dr_scores(sample, m_hat, pi_hat)
    theta = float(scores.mean())
    kind = EstimatorKind.DR_KNOWN_PS if known_ps else EstimatorKind.DRSS
    return MeanEstimate(theta, scores - theta, kind)


def fold_stream(plan: CrossFitPlan, purpose: str, k: int) -> RandomStream:
    return RandomStream(plan.seed).derive(purpose, k)


def _fit_outcome_fold(sample, plan, k, train, fold, spec: OutcomeSpec, empty_error, tag):
    try:
        labeled = train[sample.R[train] == 1]
        if labeled.size == 0 and not spec.is_oracle:
            raise empty_error("training complement has no labeled rows")
        fit = spec.fit(sample.X[labeled], sample.Y[labeled], fold_stream(plan, f"{tag}:{spec.name}", k))
        return fit, fit.predict(sample.X[fold])
    except DrssError as err:
        raise err.annotate(fold=k)


def cross_fit_outcome(
    sample: SemiSupervisedSample,
    plan: CrossFitPlan,
    spec: OutcomeSpec,
    n_jobs: int = 1,
    empty_error=NoLabeledInTrainingFold,
    tag: str = "outcome",
) -> CrossFitted:
    """Fit m on the labeled rows of each training complement, predict on the fold."""
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_outcome_fold)(sample, plan, k, train, fold, spec, empty_error, tag)
        for k, train, fold in plan.folds()
    )
    m_hat = np.empty(sample.n)
    for (k, _, fold), (_, predictions) in zip(plan.folds(), results):
        m_hat[fold] = predictions
    return CrossFitted(m_hat, tuple(fit for fit, _ in results))


def _fit_propensity_fold(sample, plan, k, train, fold, spec: PsSpec):
    try:
        delta = None if sample.delta is None else sample.delta[train]
        fit = spec.fit(sample.X[train], sample.R[train], delta, fold_stream(plan, f"ps:{spec.name}", k))
        p_delta = fit.p_delta(sample.X[fold]) if isinstance(fit, StratifiedPsFit) else None
        return fit, fit.predict(sample.X[fold]), p_delta
    except DrssError as err:
        raise err.annotate(fold=k)


def cross_fit_propensity(
    sample: SemiSupervisedSample,
    plan: CrossFitPlan,
    spec: PsSpec,
    n_jobs: int = 1,
) -> CrossFitted:
    if spec.needs_strata and sample.delta is None:
        raise InvalidSpec(f"propensity model '{spec.name}' needs stratum indicators")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_propensity_fold)(sample, plan, k, train, fold, spec)
        for k, train, fold in plan.folds()
    )
    pi_hat = np.empty(sample.n)
    p_delta = np.empty(sample.n) if spec.needs_strata else None
    for (k, _, fold), (_, predictions, fold_p_delta) in zip(plan.folds(), results):
        pi_hat[fold] = predictions
        if p_delta is not None:
            p_delta[fold] = fold_p_delta
    _check_propensity(pi_hat)
    return CrossFitted(pi_hat, tuple(fit for fit, _, _ in results), p_delta)


def run_pipeline(
    sample: SemiSupervisedSample,
    plan: CrossFitPlan,
    outcome_spec: OutcomeSpec,
    ps_spec: PsSpec,
    n_jobs: int = 1,
) -> Tuple[NuisancePredictions, MeanEstimate]:
    """Cross-fit both nuisances over the plan and return the DR estimate."""
    if plan.n != sample.n:
        raise DimensionMismatch(f"fold plan covers {plan.n} rows, sample has {sample.n}")
    outcome = cross_fit_outcome(sample, plan, outcome_spec, n_jobs)
    propensity = cross_fit_propensity(sample, plan, ps_spec, n_jobs)
    predictions = NuisancePredictions.combine(plan, outcome, propensity)
    estimate = estimate_dr(sample, predictions.m_hat, predictions.pi_hat, known_ps=ps_spec.is_oracle)
    logger.info(
        "pipeline %s/%s over %d folds: theta=%.6g", ps_spec.name, outcome_spec.name, plan.K, estimate.theta
    )
    return predictions, estimate
