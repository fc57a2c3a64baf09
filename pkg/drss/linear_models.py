"""
Outcome-model nuisance estimators m(x).

Least squares with a polynomial expansion (no interactions), lasso with a
cross-validated penalty, and Gaussian-kernel ridge regression. Every fitter
only sees labeled rows.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from sklearn.linear_model import lasso_path
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.model_selection import KFold

from .core import RandomStream
from .errors import (
    DimensionMismatch,
    EmptyGrid,
    InvalidFoldCount,
    InvalidSpec,
    NumericallySingularGram,
    RankDeficientDesign,
)

logger = logging.getLogger(__name__)

PINV_TOL = 1e-10
LASSO_GRID_SIZE = 100
LASSO_GRID_RATIO = 1e-4
LASSO_TOL = 1e-12
LASSO_MAX_ITER = 100_000
RIDGE_FLOOR = 1e-10
MAX_GRAM_CONDITION = 1e15


def _as_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-d matrix, got shape {X.shape}")
    return X


def _check_rows(X: np.ndarray, Y: np.ndarray):
    if Y.ndim != 1 or X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} design rows but outcome shape {Y.shape}")
    if Y.shape[0] < 1:
        raise DimensionMismatch("no labeled rows to fit on")


@dataclass(frozen=True)
class PolynomialFeatureMap:
    """x -> (x, x^2, ..., x^degree) column blocks, without interactions."""

    degree: int = 1

    def expand(self, X: np.ndarray) -> np.ndarray:
        return np.hstack([X**d for d in range(1, self.degree + 1)])

    def n_features(self, p: int) -> int:
        return self.degree * p

    def describe(self) -> str:
        if self.degree == 1:
            return "identity"
        return f"polynomial degree {self.degree} without interactions"


@dataclass(frozen=True, eq=False)
class LinearFit:
    """beta = (intercept, slopes on the expanded features)."""

    beta: np.ndarray
    feature_map: PolynomialFeatureMap
    n_features_in: int
    penalty: Optional[float] = None
    rank: Optional[int] = None

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in:
            raise DimensionMismatch(
                f"fit expects {self.n_features_in} columns, got {X.shape[1]}"
            )
        return self.beta[0] + self.feature_map.expand(X) @ self.beta[1:]


@dataclass(frozen=True, eq=False)
class KernelRidgeFit:
    support_points: np.ndarray
    alpha: np.ndarray
    bandwidth: float
    ridge: float

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.support_points.shape[1]:
            raise DimensionMismatch(
                f"fit expects {self.support_points.shape[1]} columns, got {X.shape[1]}"
            )
        return gaussian_gram(X, self.support_points, self.bandwidth) @ self.alpha


@dataclass(frozen=True, eq=False)
class KnownFunction:
    """A known (oracle) nuisance function injected in place of a fit."""

    function: Callable[[np.ndarray], np.ndarray]

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.function(_as_matrix(X)), dtype=float)


def gaussian_gram(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    """k(x, x') = exp(-||x - x'||^2 / (2 * bandwidth))."""
    return rbf_kernel(A, B, gamma=1.0 / (2.0 * bandwidth))


def fit_least_squares(X_lab, Y_lab, degree: int = 1) -> LinearFit:
    X = _as_matrix(X_lab, "X_lab")
    Y = np.asarray(Y_lab, dtype=float)
    _check_rows(X, Y)
    feature_map = PolynomialFeatureMap(degree)
    design = np.column_stack([np.ones(X.shape[0]), feature_map.expand(X)])

    beta, _, rank, _ = scipy.linalg.lstsq(design, Y, cond=PINV_TOL)
    if rank == 0:
        raise RankDeficientDesign("design has no column above the pseudo-inverse tolerance")
    if rank < design.shape[1]:
        logger.warning(
            "least squares design rank %d < %d columns; using minimum-norm solution",
            rank, design.shape[1],
        )
    return LinearFit(np.asarray(beta), feature_map, X.shape[1], rank=int(rank))


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Column centering/scaling; constant columns are left out of the penalty."""

    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray

    @classmethod
    def fit(cls, Phi: np.ndarray) -> "Standardizer":
        mean = Phi.mean(axis=0)
        scale = Phi.std(axis=0)
        active = scale > PINV_TOL * np.maximum(1.0, np.abs(mean))
        return cls(mean, scale, active)

    def transform(self, Phi: np.ndarray) -> np.ndarray:
        return (Phi[:, self.active] - self.mean[self.active]) / self.scale[self.active]


def lasso_lambda_max(Z: np.ndarray, yc: np.ndarray) -> float:
    if Z.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(Z.T @ yc)) / Z.shape[0])


def lasso_grid(lambda_max: float) -> np.ndarray:
    return np.geomspace(lambda_max, LASSO_GRID_RATIO * lambda_max, LASSO_GRID_SIZE)


def standardized_lasso_path(Z: np.ndarray, yc: np.ndarray, lambdas: Sequence[float]) -> np.ndarray:
    """Coefficients (len(lambdas) x q) of (1/2n)||yc - Z b||^2 + lam ||b||_1.

    Cyclic coordinate descent with warm starts along a decreasing path; rows
    come back in the order of ``lambdas``.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        raise EmptyGrid("empty lasso penalty grid")
    coefs = np.zeros((lambdas.size, Z.shape[1]))
    if Z.shape[1] == 0:
        return coefs
    order = np.argsort(-lambdas, kind="stable")
    _, path, _ = lasso_path(
        Z, yc, alphas=lambdas[order], tol=LASSO_TOL, max_iter=LASSO_MAX_ITER, selection="cyclic"
    )
    coefs[order] = path.T
    return coefs


def _cv_lasso_penalty(Phi: np.ndarray, Y: np.ndarray, grid: np.ndarray, cv_folds: int, seed: int) -> float:
    splitter = KFold(
        n_splits=cv_folds, shuffle=True,
        random_state=RandomStream(seed).derive("lasso-cv").integer_seed(),
    )
    errors = np.zeros(grid.size)
    for train, test in splitter.split(Phi):
        scaler = Standardizer.fit(Phi[train])
        y_mean = Y[train].mean()
        coefs = standardized_lasso_path(scaler.transform(Phi[train]), Y[train] - y_mean, grid)
        predictions = y_mean + scaler.transform(Phi[test]) @ coefs.T
        errors += ((Y[test][:, None] - predictions) ** 2).sum(axis=0)
    best = int(np.argmin(errors))
    logger.debug("lasso cv picked lambda %.3g (index %d of %d)", grid[best], best, grid.size)
    return float(grid[best])


def fit_lasso(
    X_lab,
    Y_lab,
    degree: int = 1,
    cv_folds: int = 5,
    seed: int = 0,
    lam: Optional[float] = None,
) -> LinearFit:
    """Lasso on standardized expanded features, unpenalized intercept.

    A constant outcome (lambda_max = 0) yields the intercept-only fit rather
    than an error. With ``lam`` absent the penalty is chosen by cv_folds-fold
    CV over the 100-point log grid from lambda_max down to 1e-4 lambda_max.
    """
    X = _as_matrix(X_lab, "X_lab")
    Y = np.asarray(Y_lab, dtype=float)
    _check_rows(X, Y)
    feature_map = PolynomialFeatureMap(degree)
    Phi = feature_map.expand(X)
    scaler = Standardizer.fit(Phi)
    Z = scaler.transform(Phi)
    y_mean = float(Y.mean())
    yc = Y - y_mean

    lambda_max = lasso_lambda_max(Z, yc)
    slopes = np.zeros(Phi.shape[1])
    if lambda_max <= 0.0:
        logger.info("degenerate outcome or design; returning intercept-only lasso fit")
        return LinearFit(np.concatenate([[y_mean], slopes]), feature_map, X.shape[1], penalty=lam)

    grid = lasso_grid(lambda_max)
    if lam is None:
        if Y.shape[0] < cv_folds:
            raise InvalidFoldCount(f"{Y.shape[0]} labeled rows for {cv_folds}-fold lasso CV")
        lam = _cv_lasso_penalty(Phi, Y, grid, cv_folds, seed)

    path = np.append(grid[grid > lam], lam)
    coef = standardized_lasso_path(Z, yc, path)[-1]
    slopes[scaler.active] = coef / scaler.scale[scaler.active]
    intercept = y_mean - scaler.mean[scaler.active] @ slopes[scaler.active]
    return LinearFit(np.concatenate([[intercept], slopes]), feature_map, X.shape[1], penalty=float(lam))


def default_ridge_grid(n_lab: int) -> np.ndarray:
    return np.geomspace(1e-4, 1e2, 10) * n_lab


def _eigen_gram(K: np.ndarray):
    eigenvalues, eigenvectors = scipy.linalg.eigh(K)
    return np.clip(eigenvalues, 0.0, None), eigenvectors


def _solve_dual(eigenvalues: np.ndarray, eigenvectors: np.ndarray, Y: np.ndarray, ridge: float) -> np.ndarray:
    ridge = max(ridge, RIDGE_FLOOR)
    shifted = eigenvalues + ridge
    condition = shifted.max() / shifted.min()
    if not np.isfinite(condition) or condition > MAX_GRAM_CONDITION:
        raise NumericallySingularGram(f"kernel system condition {condition:.3g} with ridge {ridge:.3g}")
    return eigenvectors @ ((eigenvectors.T @ Y) / shifted)


def fit_kernel_ridge(
    X_lab,
    Y_lab,
    bandwidth: Optional[float] = None,
    ridge_grid: Optional[Sequence[float]] = None,
    cv_folds: int = 5,
    seed: int = 0,
) -> KernelRidgeFit:
    """Solve (K + ridge I) alpha = Y with the ridge picked by K-fold CV.

    The bandwidth defaults to p. No centering is applied, so predictions
    shrink to 0 as the ridge grows.
    """
    X = _as_matrix(X_lab, "X_lab")
    Y = np.asarray(Y_lab, dtype=float)
    _check_rows(X, Y)
    bandwidth = float(max(X.shape[1], 1) if bandwidth is None else bandwidth)
    if bandwidth <= 0:
        raise InvalidSpec(f"bandwidth must be positive, got {bandwidth}")
    grid = default_ridge_grid(X.shape[0]) if ridge_grid is None else np.asarray(ridge_grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("empty ridge grid")

    ridge = float(grid[0])
    if grid.size > 1:
        if X.shape[0] < cv_folds:
            raise InvalidFoldCount(f"{X.shape[0]} labeled rows for {cv_folds}-fold ridge CV")
        splitter = KFold(
            n_splits=cv_folds, shuffle=True,
            random_state=RandomStream(seed).derive("ridge-cv").integer_seed(),
        )
        errors = np.zeros(grid.size)
        for train, test in splitter.split(X):
            eigenvalues, eigenvectors = _eigen_gram(gaussian_gram(X[train], X[train], bandwidth))
            cross = gaussian_gram(X[test], X[train], bandwidth)
            for j, candidate in enumerate(grid):
                alpha = _solve_dual(eigenvalues, eigenvectors, Y[train], candidate)
                errors[j] += np.sum((Y[test] - cross @ alpha) ** 2)
        ridge = float(grid[int(np.argmin(errors))])

    eigenvalues, eigenvectors = _eigen_gram(gaussian_gram(X, X, bandwidth))
    alpha = _solve_dual(eigenvalues, eigenvectors, Y, ridge)
    return KernelRidgeFit(X.copy(), alpha, bandwidth, ridge)


OutcomeFit = Union[LinearFit, KernelRidgeFit, KnownFunction]


def predict(fit: OutcomeFit, X_eval) -> np.ndarray:
    return fit.predict(_as_matrix(X_eval, "X_eval"))


# name -> (method, degree)
OUTCOME_MODELS = {
    "ls": ("ls", 1),
    "poly": ("ls", 2),
    "poly2": ("ls", 2),
    "poly3": ("ls", 3),
    "lasso": ("lasso", 1),
    "poly-lasso": ("lasso", 2),
    "rkhs": ("rkhs", 1),
}


@dataclass(frozen=True)
class OutcomeSpec:
    """Named outcome working model, or an injected oracle m(.)."""

    name: str
    method: str
    degree: int = 1
    cv_folds: int = 5
    function: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def parse(cls, name: str, cv_folds: int = 5) -> "OutcomeSpec":
        if name not in OUTCOME_MODELS:
            raise InvalidSpec(f"unknown outcome model '{name}'; choose from {sorted(OUTCOME_MODELS)}")
        method, degree = OUTCOME_MODELS[name]
        return cls(name, method, degree, cv_folds)

    @classmethod
    def oracle(cls, function: Callable[[np.ndarray], np.ndarray]) -> "OutcomeSpec":
        return cls("oracle", "oracle", function=function)

    @property
    def is_oracle(self) -> bool:
        return self.method == "oracle"

    def fit(self, X_lab: np.ndarray, Y_lab: np.ndarray, stream: RandomStream) -> OutcomeFit:
        if self.method == "oracle":
            return KnownFunction(self.function)
        if self.method == "ls":
            return fit_least_squares(X_lab, Y_lab, self.degree)
        if self.method == "lasso":
            return fit_lasso(X_lab, Y_lab, self.degree, self.cv_folds, stream.integer_seed())
        if self.method == "rkhs":
            return fit_kernel_ridge(X_lab, Y_lab, cv_folds=self.cv_folds, seed=stream.integer_seed())
        raise InvalidSpec(f"unknown outcome method '{self.method}'")
