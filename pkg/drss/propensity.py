"""
Propensity score estimators for decaying labeling probabilities.

The offset logistic model writes P(R=1|x) = g(x'gamma + log a) with g the
logistic function and a the labeled fraction, so gamma stays O(1) while the
labeling probability shrinks. Fits: MCAR constant, offset MLE (damped Newton),
offset lasso (accelerated proximal gradient) and stratified labeling.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
from scipy.special import expit
from sklearn.model_selection import StratifiedKFold

from .core import RandomStream
from .errors import (
    DimensionMismatch,
    EmptyGrid,
    EmptyLabeledSet,
    EmptyStratum,
    InvalidFoldCount,
    InvalidIndicator,
    InvalidSpec,
    NoLabeledInTrainingFold,
    NonpositivePropensity,
    RankDeficientDesign,
    Separation,
)

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 100
NEWTON_MAX_HALVINGS = 50
NEWTON_GRAD_TOL = 1e-8
NEWTON_MAX_COEF = 1e3
SEPARATION_TOL = 1e-6
PROX_MAX_ITER = 20_000
PROX_OBJ_TOL = 1e-9
PROX_GRAD_MAP_TOL = 1e-7
POWER_ITERATIONS = 100
LAMBDA_MULTIPLIERS = np.logspace(-5, 4, 20, base=2.0)


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be a 2-d matrix, got shape {X.shape}")
    return np.column_stack([np.ones(X.shape[0]), X])


def _check_binary(R, n: int, name: str = "R") -> np.ndarray:
    R = np.asarray(R)
    if R.ndim != 1 or R.shape[0] != n:
        raise DimensionMismatch(f"{name} has shape {R.shape}, expected ({n},)")
    if not np.isin(R, (0, 1)).all():
        raise InvalidIndicator(f"{name} must contain only 0/1 values")
    return R.astype(float)


def _loss(design: np.ndarray, R: np.ndarray, gamma: np.ndarray, offset: float) -> float:
    eta = design @ gamma
    return float(-np.mean(R * eta - np.logaddexp(0.0, eta + offset)))


def _gradient(design: np.ndarray, R: np.ndarray, gamma: np.ndarray, offset: float) -> np.ndarray:
    return -design.T @ (R - expit(design @ gamma + offset)) / design.shape[0]


def _hessian(design: np.ndarray, gamma: np.ndarray, offset: float) -> np.ndarray:
    prob = expit(design @ gamma + offset)
    return (design * (prob * (1.0 - prob))[:, None]).T @ design / design.shape[0]


def _prepare(gamma, a: float, X, R):
    design = add_intercept(X)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (design.shape[1],):
        raise DimensionMismatch(f"gamma has shape {gamma.shape}, expected ({design.shape[1]},)")
    if not a > 0:
        raise NonpositivePropensity(f"offset level a must be positive, got {a}")
    return design, gamma, _check_binary(R, design.shape[0])


def offset_loglik(gamma, a: float, X, R) -> float:
    """l_N(gamma; a) = -mean(R x'gamma - log(1 + a exp(x'gamma)))."""
    design, gamma, R = _prepare(gamma, a, X, R)
    return _loss(design, R, gamma, np.log(a))


def offset_loglik_gradient(gamma, a: float, X, R) -> np.ndarray:
    design, gamma, R = _prepare(gamma, a, X, R)
    return _gradient(design, R, gamma, np.log(a))


def offset_loglik_hessian(gamma, a: float, X, R) -> np.ndarray:
    design, gamma, _ = _prepare(gamma, a, X, R)
    return _hessian(design, gamma, np.log(a))


@dataclass(frozen=True, eq=False)
class OffsetLogisticFit:
    """gamma (intercept first) of g(x'gamma + log pi_hat_N)."""

    gamma: np.ndarray
    offset: float
    pi_hat_N: float
    penalty: Optional[float] = None
    n_iter: int = 0
    converged: bool = True
    grad_norm: float = float("nan")

    @property
    def n_features_in(self) -> int:
        return self.gamma.shape[0] - 1

    def linear_predictor(self, X) -> np.ndarray:
        design = add_intercept(X)
        if design.shape[1] != self.gamma.shape[0]:
            raise DimensionMismatch(
                f"fit expects {self.n_features_in} columns, got {design.shape[1] - 1}"
            )
        return design @ self.gamma + self.offset

    def predict(self, X) -> np.ndarray:
        return expit(self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "gamma": [float(v) for v in self.gamma],
            "offset": float(self.offset),
            "pi_hat_N": float(self.pi_hat_N),
            "penalty": None if self.penalty is None else float(self.penalty),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "grad_norm": float(self.grad_norm),
        }


@dataclass(frozen=True, eq=False)
class StratifiedPsFit:
    pi1: float
    pi0: float
    p_delta_model: OffsetLogisticFit

    def p_delta(self, X) -> np.ndarray:
        return self.p_delta_model.predict(X)

    def predict(self, X) -> np.ndarray:
        p_delta = self.p_delta(X)
        return self.pi1 * p_delta + self.pi0 * (1.0 - p_delta)

    def to_dict(self) -> dict:
        return {"pi1": self.pi1, "pi0": self.pi0, "p_delta_model": self.p_delta_model.to_dict()}


@dataclass(frozen=True)
class McarPsFit:
    pi_hat: float

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.pi_hat)

    def to_dict(self) -> dict:
        return {"pi_hat": self.pi_hat}


def fit_mcar(R_train) -> McarPsFit:
    R = np.asarray(R_train, dtype=float)
    if R.size == 0 or R.sum() < 1:
        raise EmptyLabeledSet("no labeled rows to estimate a constant propensity")
    return McarPsFit(float(R.mean()))


def _newton(design: np.ndarray, R: np.ndarray, offset: float) -> OffsetLogisticFit:
    """Damped Newton for the offset likelihood; raises Separation on failure."""
    gamma = np.zeros(design.shape[1])
    r_bar = R.mean()
    gamma[0] = np.log(r_bar / (1.0 - r_bar)) - offset
    loss = _loss(design, R, gamma, offset)
    grad = _gradient(design, R, gamma, offset)

    for iteration in range(NEWTON_MAX_ITER + 1):
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= NEWTON_GRAD_TOL:
            if np.all(np.abs(expit(design @ gamma + offset) - R) < SEPARATION_TOL):
                raise Separation("fitted probabilities reproduce R exactly (perfect separation)")
            logger.debug("newton converged in %d iterations (|grad|=%.2e)", iteration, grad_norm)
            return OffsetLogisticFit(gamma, offset, float(np.exp(offset)), None, iteration, True, grad_norm)
        if iteration == NEWTON_MAX_ITER:
            break
        try:
            step = scipy.linalg.solve(_hessian(design, gamma, offset), grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise Separation(f"singular hessian at iteration {iteration}: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise Separation(f"non-finite newton step at iteration {iteration}")

        scale = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            candidate = gamma - scale * step
            candidate_loss = _loss(design, R, candidate, offset)
            if candidate_loss <= loss + 1e-12 * (1.0 + abs(loss)):
                break
            scale *= 0.5
        else:
            raise Separation(f"step halving failed at iteration {iteration}")

        gamma, loss = candidate, candidate_loss
        if np.max(np.abs(gamma)) > NEWTON_MAX_COEF:
            raise Separation(f"coefficients diverging (|gamma|={np.max(np.abs(gamma)):.3g})")
        grad = _gradient(design, R, gamma, offset)

    raise Separation(
        f"no convergence after {NEWTON_MAX_ITER} newton iterations (|grad|={grad_norm:.3g})"
    )


def _check_training(X_train, R_train):
    design = add_intercept(X_train)
    R = _check_binary(R_train, design.shape[0], "R_train")
    n_labeled = int(R.sum())
    if n_labeled == 0:
        raise NoLabeledInTrainingFold("training rows contain no labeled observation")
    if n_labeled == R.shape[0]:
        raise Separation("training rows contain no unlabeled observation")
    return design, R


def fit_offset_logistic_mle(X_train, R_train) -> OffsetLogisticFit:
    """Offset MLE with the offset fixed at log(mean(R_train))."""
    design, R = _check_training(X_train, R_train)
    if design.shape[1] > design.shape[0]:
        raise RankDeficientDesign(f"{design.shape[1]} parameters for {design.shape[0]} rows")
    return _newton(design, R, float(np.log(R.mean())))


def fit_logistic_mle(X, y) -> OffsetLogisticFit:
    """Ordinary logistic MLE, i.e. the offset model at a = 1."""
    design = add_intercept(X)
    y = _check_binary(y, design.shape[0], "y")
    if y.sum() in (0, y.shape[0]):
        raise Separation("binary response has a single class")
    return _newton(design, y, 0.0)


def _soft_threshold(v: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresholds, 0.0)


def lipschitz_estimate(design: np.ndarray) -> float:
    """Power-iteration bound 1/4 * lambda_max(design'design / N) on the loss curvature."""
    v = np.ones(design.shape[1]) / np.sqrt(design.shape[1])
    eigenvalue = 0.0
    for _ in range(POWER_ITERATIONS):
        w = design.T @ (design @ v) / design.shape[0]
        eigenvalue = float(np.linalg.norm(w))
        if eigenvalue == 0.0:
            break
        v = w / eigenvalue
    return max(eigenvalue / 4.0, 1e-12)


def _penalty_weights(q: int, penalize_intercept: bool) -> np.ndarray:
    weights = np.ones(q)
    if not penalize_intercept:
        weights[0] = 0.0
    return weights


def _proximal_gradient(
    design: np.ndarray,
    R: np.ndarray,
    offset: float,
    lam: float,
    weights: np.ndarray,
    start: Optional[np.ndarray] = None,
):
    """Accelerated proximal gradient with backtracking and adaptive restart.

    Returns (gamma, n_iter, converged, grad_map_norm).
    """
    x = np.zeros(design.shape[1]) if start is None else start.copy()
    y = x.copy()
    momentum = 1.0
    step = 1.0 / lipschitz_estimate(design)
    objective = _loss(design, R, x, offset) + lam * np.sum(weights * np.abs(x))
    grad_map_norm = np.inf

    for iteration in range(1, PROX_MAX_ITER + 1):
        loss_y = _loss(design, R, y, offset)
        grad_y = _gradient(design, R, y, offset)
        while True:
            z = _soft_threshold(y - step * grad_y, step * lam * weights)
            d = z - y
            if _loss(design, R, z, offset) <= loss_y + grad_y @ d + d @ d / (2.0 * step) + 1e-15:
                break
            step *= 0.5
            if step < 1e-20:
                raise Separation("proximal gradient backtracking collapsed")
        grad_map_norm = float(np.max(np.abs(d))) / step
        new_objective = _loss(design, R, z, offset) + lam * np.sum(weights * np.abs(z))

        if new_objective > objective:
            y = x.copy()
            momentum = 1.0
            continue

        next_momentum = (1.0 + np.sqrt(1.0 + 4.0 * momentum**2)) / 2.0
        y = z + ((momentum - 1.0) / next_momentum) * (z - x)
        change = abs(objective - new_objective)
        x, objective, momentum = z, new_objective, next_momentum
        if change < PROX_OBJ_TOL * (1.0 + abs(objective)) and grad_map_norm <= PROX_GRAD_MAP_TOL:
            return x, iteration, True, grad_map_norm

    logger.warning(
        "proximal gradient hit %d iterations (lambda=%.3g, |G|=%.2e)", PROX_MAX_ITER, lam, grad_map_norm
    )
    return x, PROX_MAX_ITER, False, grad_map_norm


def theoretical_penalty(a: float, p: int, n: int) -> float:
    """sqrt(a log(p+1) / n), the penalty rate for labeled fraction a."""
    return float(np.sqrt(a * np.log(p + 1) / n))


def lambda_grid(a: float, p: int, n: int) -> np.ndarray:
    """Multiples 2^-5..2^4 of ``theoretical_penalty``, decreasing."""
    return np.sort(LAMBDA_MULTIPLIERS * theoretical_penalty(a, p, n))[::-1]


def _cv_penalty(
    design: np.ndarray,
    R: np.ndarray,
    grid: np.ndarray,
    weights: np.ndarray,
    cv_folds: int,
    seed: int,
    fixed_offset: Optional[float],
) -> float:
    if grid.size == 0:
        raise EmptyGrid("empty propensity penalty grid")
    if min(R.sum(), (1 - R).sum()) < cv_folds:
        raise InvalidFoldCount(f"too few labeled rows for {cv_folds}-fold penalty CV")
    splitter = StratifiedKFold(
        n_splits=cv_folds, shuffle=True,
        random_state=RandomStream(seed).derive("ps-lasso-cv").integer_seed(),
    )
    held_out = np.zeros(grid.size)
    for train, test in splitter.split(design, R):
        offset = float(np.log(R[train].mean())) if fixed_offset is None else fixed_offset
        gamma = None
        for j, lam in enumerate(grid):
            gamma, _, _, _ = _proximal_gradient(design[train], R[train], offset, lam, weights, gamma)
            held_out[j] += _loss(design[test], R[test], gamma, offset)
    best = int(np.argmin(held_out))
    logger.debug("propensity lasso cv picked lambda %.3g (index %d)", grid[best], best)
    return float(grid[best])


def _fit_penalized(
    design: np.ndarray,
    R: np.ndarray,
    offset: float,
    lam: Optional[float],
    penalize_intercept: bool,
    cv_folds: int,
    seed: int,
    cv_offset: Optional[float],
) -> OffsetLogisticFit:
    weights = _penalty_weights(design.shape[1], penalize_intercept)
    if lam is None:
        grid = lambda_grid(float(np.exp(offset)), design.shape[1] - 1, design.shape[0])
        lam = _cv_penalty(design, R, grid, weights, cv_folds, seed, cv_offset)
    if lam < 0:
        raise InvalidSpec(f"penalty must be nonnegative, got {lam}")
    gamma, n_iter, converged, grad_map_norm = _proximal_gradient(design, R, offset, lam, weights)
    return OffsetLogisticFit(
        gamma, offset, float(np.exp(offset)), float(lam), n_iter, converged, grad_map_norm
    )


def fit_offset_logistic_lasso(
    X_train,
    R_train,
    lam: Optional[float] = None,
    penalize_intercept: bool = True,
    cv_folds: int = 5,
    seed: int = 0,
) -> OffsetLogisticFit:
    """min l_N(gamma; pi_hat_N) + lam * ||gamma||_1, p may exceed N.

    The full gamma is penalized unless ``penalize_intercept`` is False. With
    ``lam`` absent the penalty comes from stratified K-fold CV on held-out
    offset likelihood over ``lambda_grid``.
    """
    design, R = _check_training(X_train, R_train)
    offset = float(np.log(R.mean()))
    return _fit_penalized(design, R, offset, lam, penalize_intercept, cv_folds, seed, None)


def fit_logistic_lasso(
    X,
    y,
    lam: Optional[float] = None,
    penalize_intercept: bool = True,
    cv_folds: int = 5,
    seed: int = 0,
) -> OffsetLogisticFit:
    """l1-penalized ordinary logistic regression (offset model at a = 1)."""
    design = add_intercept(X)
    y = _check_binary(y, design.shape[0], "y")
    if y.sum() in (0, y.shape[0]):
        raise Separation("binary response has a single class")
    return _fit_penalized(design, y, 0.0, lam, penalize_intercept, cv_folds, seed, 0.0)


def fit_stratified(X_train, R_train, delta_train, highdim: bool = False, seed: int = 0) -> StratifiedPsFit:
    """pi(x) = pi1 p_delta(x) + pi0 (1 - p_delta(x)) with per-stratum labeled fractions."""
    X = np.asarray(X_train, dtype=float)
    R = _check_binary(R_train, X.shape[0], "R_train")
    delta = _check_binary(delta_train, X.shape[0], "delta_train")
    in_stratum, out_stratum = delta.sum(), (1.0 - delta).sum()
    if in_stratum == 0 or out_stratum == 0:
        raise EmptyStratum(f"stratum sizes {int(in_stratum)}/{int(out_stratum)} in training rows")
    if R.sum() == 0:
        raise NoLabeledInTrainingFold("training rows contain no labeled observation")

    pi1 = float((delta * R).sum() / in_stratum)
    pi0 = float(((1.0 - delta) * R).sum() / out_stratum)
    if highdim:
        model = fit_logistic_lasso(X, delta, seed=seed)
    else:
        model = fit_logistic_mle(X, delta)
    return StratifiedPsFit(pi1, pi0, model)


def rsc_inequality_check(gamma0, Delta, a: float, X, R, slack: float = 1e-12) -> bool:
    """Whether the Bregman remainder at level a dominates a times the one at level 1."""
    design, gamma0, R = _prepare(gamma0, a, X, R)
    Delta = np.asarray(Delta, dtype=float)
    if Delta.shape != gamma0.shape:
        raise DimensionMismatch(f"Delta has shape {Delta.shape}, expected {gamma0.shape}")

    def remainder(offset: float) -> float:
        base = _loss(design, R, gamma0, offset)
        moved = _loss(design, R, gamma0 + Delta, offset)
        return moved - base - Delta @ _gradient(design, R, gamma0, offset)

    imbalanced, balanced = remainder(np.log(a)), remainder(0.0)
    return bool(imbalanced >= a * balanced - slack * (1.0 + abs(imbalanced) + abs(balanced)))


@dataclass(frozen=True, eq=False)
class KnownPropensity:
    function: Callable[[np.ndarray], np.ndarray]

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.function(np.asarray(X, dtype=float)), dtype=float)


PsFit = Union[McarPsFit, OffsetLogisticFit, StratifiedPsFit, KnownPropensity]

PS_MODELS = ("constant", "logistic", "log-lasso", "stratified", "stratified-lasso", "oracle")


@dataclass(frozen=True)
class PsSpec:
    """Named propensity working model, or an injected oracle pi(.)."""

    name: str
    cv_folds: int = 5
    penalize_intercept: bool = True
    function: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def parse(cls, name: str, cv_folds: int = 5, penalize_intercept: bool = True) -> "PsSpec":
        aliases = {"mcar": "constant", "offset-logistic": "logistic", "lasso": "log-lasso"}
        name = aliases.get(name, name)
        if name not in PS_MODELS or name == "oracle":
            raise InvalidSpec(f"unknown propensity model '{name}'; choose from {list(PS_MODELS[:-1])}")
        return cls(name, cv_folds, penalize_intercept)

    @classmethod
    def oracle(cls, function: Callable[[np.ndarray], np.ndarray]) -> "PsSpec":
        return cls("oracle", function=function)

    @property
    def is_oracle(self) -> bool:
        return self.name == "oracle"

    @property
    def needs_strata(self) -> bool:
        return self.name.startswith("stratified")

    def fit(self, X, R, delta: Optional[np.ndarray], stream: RandomStream) -> PsFit:
        if self.name == "oracle":
            return KnownPropensity(self.function)
        if self.name == "constant":
            return fit_mcar(R)
        if self.name == "logistic":
            return fit_offset_logistic_mle(X, R)
        if self.name == "log-lasso":
            return fit_offset_logistic_lasso(
                X, R, penalize_intercept=self.penalize_intercept,
                cv_folds=self.cv_folds, seed=stream.integer_seed(),
            )
        if delta is None:
            raise InvalidSpec(f"propensity model '{self.name}' needs a stratum column")
        return fit_stratified(X, R, delta, highdim=self.name == "stratified-lasso", seed=stream.integer_seed())
