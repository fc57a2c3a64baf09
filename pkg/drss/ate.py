"""
Average treatment effect with extremely imbalanced arms.

Each arm mean is a DR estimate on the arm's missing-data view: the treated
arm weights by pi_hat, the control arm by 1 - pi_hat. Repeated sample splits
are combined by the median rule.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .core import RandomStream, SemiSupervisedSample, make_folds
from .errors import DegeneratePropensityOne, DimensionMismatch, DrssError, EmptyArmInTrainingFold
from .inference import confidence_interval
from .linear_models import OutcomeSpec
from .mean_estimators import cross_fit_outcome, cross_fit_propensity, estimate_dr
from .propensity import PsSpec

logger = logging.getLogger(__name__)

CONTROL_FLOOR = 1e-12


@dataclass(frozen=True)
class EmpiricalDifference:
    theta: float
    v_hat: float
    ci: Tuple[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {"theta": self.theta, "v_hat": self.v_hat, "ci": list(self.ci)}


@dataclass(frozen=True)
class AteReport:
    theta1: float
    theta0: float
    theta_ate: float
    v_hat: float
    ci: Tuple[float, float]
    alpha: float
    n: int
    n_treated: int
    per_split: List[Tuple[float, float]] = field(default_factory=list)
    B: int = 1
    floored: int = 0
    empdiff: Optional[EmpiricalDifference] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta1": self.theta1,
            "theta0": self.theta0,
            "theta_ate": self.theta_ate,
            "v_hat": self.v_hat,
            "se": float(np.sqrt(self.v_hat / self.n)),
            "ci": list(self.ci),
            "alpha": self.alpha,
            "n": self.n,
            "n_treated": self.n_treated,
            "B": self.B,
            "per_split": [{"theta_ate": t, "v_hat": v} for t, v in self.per_split],
            "control_propensity_floored": self.floored,
            "empdiff": None if self.empdiff is None else self.empdiff.to_dict(),
        }


def estimate_theta1(sample: SemiSupervisedSample, m1_hat, pi_hat) -> Tuple[float, np.ndarray]:
    estimate = estimate_dr(sample.arm_view(1), m1_hat, pi_hat)
    return estimate.theta, estimate.psi


def control_propensity(pi_hat, floor: Optional[float] = None) -> Tuple[np.ndarray, int]:
    """1 - pi_hat, raised to ``floor`` where needed; returns (values, count raised)."""
    control = 1.0 - np.asarray(pi_hat, dtype=float)
    if floor is None:
        bad = np.flatnonzero(~(control > 0))
        if bad.size:
            raise DegeneratePropensityOne("propensity reaches 1 on a control-arm denominator", row=int(bad[0]))
        return control, 0
    raised = int(np.sum(control < floor))
    if raised:
        logger.warning("control propensity floored at %.0e on %d rows", floor, raised)
    return np.maximum(control, floor), raised


def estimate_theta0(
    sample: SemiSupervisedSample, m0_hat, pi_hat, floor: Optional[float] = None
) -> Tuple[float, np.ndarray]:
    control, _ = control_propensity(pi_hat, floor)
    estimate = estimate_dr(sample.arm_view(0), m0_hat, control)
    return estimate.theta, estimate.psi


def empirical_difference(sample: SemiSupervisedSample, alpha: float = 0.05) -> EmpiricalDifference:
    """Treated mean minus control mean with its plug-in interval."""
    _check_arms(sample.R)
    treated = sample.R == 1
    share = treated.mean()
    mean1, mean0 = sample.Y[treated].mean(), sample.Y[~treated].mean()
    psi = np.where(treated, (sample.Y - mean1) / share, -(sample.Y - mean0) / (1.0 - share))
    theta = float(mean1 - mean0)
    v_hat = float(np.mean(psi**2))
    return EmpiricalDifference(theta, v_hat, confidence_interval(theta, v_hat, sample.n, alpha))


def _check_arms(R: np.ndarray) -> None:
    n_treated = int(R.sum())
    if n_treated == 0 or n_treated == R.shape[0]:
        raise EmptyArmInTrainingFold(f"{n_treated} treated of {R.shape[0]} rows; both arms must be present")


def estimate_ate(
    sample: SemiSupervisedSample,
    plan,
    m1_spec: OutcomeSpec,
    m0_spec: OutcomeSpec,
    ps_spec: PsSpec,
    alpha: float = 0.05,
    n_jobs: int = 1,
    floor: Optional[float] = CONTROL_FLOOR,
    with_empdiff: bool = True,
) -> AteReport:
    """Cross-fitted DR ATE: m1 on treated rows, m0 on control rows, pi on all rows."""
    if plan.n != sample.n:
        raise DimensionMismatch(f"fold plan covers {plan.n} rows, sample has {sample.n}")
    _check_arms(sample.R)

    m1 = cross_fit_outcome(sample.arm_view(1), plan, m1_spec, n_jobs, EmptyArmInTrainingFold, "treated")
    m0 = cross_fit_outcome(sample.arm_view(0), plan, m0_spec, n_jobs, EmptyArmInTrainingFold, "control")
    pi_hat = cross_fit_propensity(sample, plan, ps_spec, n_jobs).values

    theta1, psi1 = estimate_theta1(sample, m1.values, pi_hat)
    control, floored = control_propensity(pi_hat, floor)
    control_arm = estimate_dr(sample.arm_view(0), m0.values, control)
    theta0, psi0 = control_arm.theta, control_arm.psi
    v_hat = float(np.mean((psi1 - psi0) ** 2))
    theta_ate = theta1 - theta0
    logger.info("ate over %d folds: theta1=%.6g theta0=%.6g", plan.K, theta1, theta0)
    return AteReport(
        theta1, theta0, theta_ate, v_hat,
        confidence_interval(theta_ate, v_hat, sample.n, alpha),
        alpha, sample.n, int(sample.R.sum()),
        per_split=[(theta_ate, v_hat)], B=1, floored=floored,
        empdiff=empirical_difference(sample, alpha) if with_empdiff else None,
    )


def median_aggregate(thetas, variances) -> Tuple[float, float]:
    """median(theta_b) and median(V_b + (theta_b - median)^2)."""
    thetas = np.asarray(thetas, dtype=float)
    variances = np.asarray(variances, dtype=float)
    theta = float(np.median(thetas))
    return theta, float(np.median(variances + (thetas - theta) ** 2))


def split_seed(seed: int, b: int) -> int:
    """Fold seed of split b; split 0 reuses the base seed."""
    if b == 0:
        return int(seed)
    return RandomStream(seed).derive("split", b).integer_seed()


def _one_split(sample, b, K, seed, m1_spec, m0_spec, ps_spec, alpha, floor):
    try:
        plan = make_folds(sample.n, K, split_seed(seed, b))
        return estimate_ate(sample, plan, m1_spec, m0_spec, ps_spec, alpha, 1, floor, with_empdiff=False)
    except DrssError as err:
        raise err.annotate(split=b)


def repeated_split_ate(
    sample: SemiSupervisedSample,
    B: int = 10,
    K: int = 5,
    seed: int = 0,
    m1_spec: Optional[OutcomeSpec] = None,
    m0_spec: Optional[OutcomeSpec] = None,
    ps_spec: Optional[PsSpec] = None,
    alpha: float = 0.05,
    n_jobs: int = 1,
    floor: Optional[float] = CONTROL_FLOOR,
) -> AteReport:
    """Run ``estimate_ate`` over B fold seeds and combine by the median rule.

    theta1/theta0 average the split(s) sitting at the median, so the report
    keeps theta_ate = theta1 - theta0.
    """
    if B < 1:
        raise DimensionMismatch(f"need B >= 1 splits, got {B}")
    m1_spec = m1_spec or OutcomeSpec.parse("ls")
    m0_spec = m0_spec or OutcomeSpec.parse("ls")
    ps_spec = ps_spec or PsSpec.parse("logistic")

    reports = Parallel(n_jobs=n_jobs)(
        delayed(_one_split)(sample, b, K, seed, m1_spec, m0_spec, ps_spec, alpha, floor)
        for b in range(B)
    )
    empdiff = empirical_difference(sample, alpha)
    if B == 1:
        return replace(reports[0], empdiff=empdiff)

    thetas = np.array([r.theta_ate for r in reports])
    theta, v_hat = median_aggregate(thetas, [r.v_hat for r in reports])
    order = np.argsort(thetas, kind="stable")
    middle = order[(B - 1) // 2: B // 2 + 1]
    theta1 = float(np.mean([reports[i].theta1 for i in middle]))
    theta0 = float(np.mean([reports[i].theta0 for i in middle]))
    logger.info("median over %d splits: theta_ate=%.6g", B, theta)
    return AteReport(
        theta1, theta0, theta1 - theta0, v_hat,
        confidence_interval(theta1 - theta0, v_hat, sample.n, alpha),
        alpha, sample.n, int(sample.R.sum()),
        per_split=[(r.theta_ate, r.v_hat) for r in reports], B=B,
        floored=sum(r.floored for r in reports),
        empdiff=empdiff,
    )
