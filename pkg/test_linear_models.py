#!/usr/bin/env python3
"""
Outcome Model Test Suite
Least squares, lasso and kernel ridge fitters against independent solvers
"""
import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from drss.core import RandomStream
from drss.errors import DimensionMismatch, EmptyGrid, InvalidSpec
from drss.linear_models import (
    KernelRidgeFit,
    LinearFit,
    OutcomeSpec,
    PolynomialFeatureMap,
    Standardizer,
    fit_kernel_ridge,
    fit_lasso,
    fit_least_squares,
    gaussian_gram,
    lasso_lambda_max,
    predict,
)
from drss.reporting import print_section


def test_two_point_line():
    fit = fit_least_squares([[0.0], [1.0]], [1.0, 3.0])
    assert_allclose(fit.beta, [1.0, 2.0], atol=1e-12)


def test_exact_parabola():
    fit = fit_least_squares([[-1.0], [0.0], [1.0]], [1.0, 0.0, 1.0], degree=2)
    assert_allclose(fit.beta, [0.0, 0.0, 1.0], atol=1e-12)
    assert predict(fit, [[2.0]])[0] == pytest.approx(4.0)


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((50, 3))
    Y = X @ [1.0, -2.0, 0.5] + rng.standard_normal(50)
    design = np.column_stack([np.ones(50), X])
    oracle = scipy.linalg.solve(design.T @ design, design.T @ Y, assume_a="pos")
    assert_allclose(fit_least_squares(X, Y).beta, oracle, atol=1e-8)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_least_squares_residual_orthogonal_to_design(degree):
    rng = np.random.default_rng(9)
    X = rng.standard_normal((80, 4))
    Y = np.exp(X[:, 0]) + X[:, 1] * X[:, 2] + rng.standard_normal(80)
    fit = fit_least_squares(X, Y, degree)
    design = np.column_stack([np.ones(80), PolynomialFeatureMap(degree).expand(X)])
    scale = np.abs(design.T) @ np.abs(Y)
    assert np.all(np.abs(design.T @ (Y - design @ fit.beta)) <= 1e-10 * scale)


@pytest.mark.parametrize("degree,p", [(1, 5), (2, 5), (3, 2)])
def test_polynomial_feature_count(degree, p):
    X = np.random.default_rng(0).standard_normal((6, p))
    feature_map = PolynomialFeatureMap(degree)
    assert feature_map.expand(X).shape == (6, degree * p)
    assert feature_map.n_features(p) == degree * p
    assert fit_least_squares(X, np.arange(6.0), degree).beta.shape == (1 + degree * p,)


def test_affine_prediction():
    fit = LinearFit(np.array([1.0, 2.0]), PolynomialFeatureMap(1), 1)
    assert predict(fit, [[3.0]])[0] == pytest.approx(7.0)
    with pytest.raises(DimensionMismatch):
        predict(fit, [[3.0, 4.0]])


def test_rank_deficient_design_uses_minimum_norm(caplog):
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    fit = fit_least_squares(X, [1.0, 2.0, 3.0])
    assert fit.rank == 2
    assert_allclose(predict(fit, X), [1.0, 2.0, 3.0], atol=1e-8)
    assert "rank" in caplog.text


def test_lasso_constant_outcome():
    X = np.random.default_rng(0).standard_normal((20, 3))
    fit = fit_lasso(X, np.full(20, 2.5))
    assert_allclose(fit.beta, [2.5, 0.0, 0.0, 0.0])


def test_lasso_full_shrinkage():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 4))
    Y = X[:, 0] + rng.standard_normal(40)
    scaler = Standardizer.fit(X)
    lam = 2.0 * lasso_lambda_max(scaler.transform(X), Y - Y.mean())
    fit = fit_lasso(X, Y, lam=lam)
    assert_allclose(fit.beta[1:], 0.0, atol=1e-12)
    assert fit.beta[0] == pytest.approx(Y.mean())


def _lasso_objective(Z, yc, b, lam):
    return 0.5 * np.mean((yc - Z @ b) ** 2) + lam * np.abs(b).sum()


def _ista_oracle(Z, yc, lam, iterations=200000):
    step = Z.shape[0] / np.linalg.eigvalsh(Z.T @ Z).max()
    b = np.zeros(Z.shape[1])
    for _ in range(iterations):
        v = b - step * (Z.T @ (Z @ b - yc) / Z.shape[0])
        b_next = np.sign(v) * np.maximum(np.abs(v) - step * lam, 0.0)
        if np.max(np.abs(b_next - b)) < 1e-14:
            return b_next
        b = b_next
    return b


def test_lasso_objective_matches_proximal_oracle():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((100, 10))
    Y = X[:, :3] @ [2.0, -1.0, 0.5] + rng.standard_normal(100)
    lam = 0.05
    fit = fit_lasso(X, Y, lam=lam)
    scaler = Standardizer.fit(X)
    Z, yc = scaler.transform(X), Y - Y.mean()
    ours = fit.beta[1:] * scaler.scale
    oracle = _ista_oracle(Z, yc, lam)
    assert _lasso_objective(Z, yc, ours, lam) <= _lasso_objective(Z, yc, oracle, lam) + 1e-8


@pytest.mark.parametrize("lam", [0.02, 0.1, 0.3])
def test_lasso_kkt_conditions(lam):
    rng = np.random.default_rng(4)
    X = rng.standard_normal((120, 8))
    Y = X[:, :3] @ [1.5, -1.0, 0.4] + rng.standard_normal(120)
    fit = fit_lasso(X, Y, lam=lam)
    scaler = Standardizer.fit(X)
    Z, yc = scaler.transform(X), Y - Y.mean()
    b = fit.beta[1:] * scaler.scale
    correlation = Z.T @ (yc - Z @ b) / Z.shape[0]
    active = np.abs(b) > 1e-10
    assert active.any()
    assert_allclose(correlation[active], lam * np.sign(b[active]), atol=1e-5)
    assert np.all(np.abs(correlation[~active]) <= lam + 1e-5)


def test_lasso_cv_is_seeded():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((60, 5))
    Y = X[:, 0] + 0.3 * rng.standard_normal(60)
    first, second = fit_lasso(X, Y, seed=4), fit_lasso(X, Y, seed=4)
    assert first.penalty == second.penalty
    assert_allclose(first.beta, second.beta, rtol=0, atol=0)
    assert abs(first.beta[1] - 1.0) < 0.2


def test_kernel_ridge_single_point():
    fit = fit_kernel_ridge([[0.3, -1.0]], [2.0], ridge_grid=[0.5])
    assert predict(fit, [[0.3, -1.0]])[0] == pytest.approx(2.0 / 1.5)


def test_kernel_ridge_matches_dense_solve():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((30, 2))
    Y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(30)
    fit = fit_kernel_ridge(X, Y, bandwidth=1.5, ridge_grid=[0.1])
    K = gaussian_gram(X, X, 1.5)
    oracle = scipy.linalg.solve(K + 0.1 * np.eye(30), Y)
    assert_allclose(fit.alpha, oracle, atol=1e-8)


def test_kernel_ridge_shrinks_without_centering():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((15, 2))
    fit = fit_kernel_ridge(X, 5.0 + X[:, 0], ridge_grid=[1e12])
    assert np.max(np.abs(predict(fit, X))) < 1e-9


def test_kernel_ridge_default_bandwidth_and_cv():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40, 3))
    fit = fit_kernel_ridge(X, X[:, 0] ** 2, seed=1)
    assert isinstance(fit, KernelRidgeFit)
    assert fit.bandwidth == 3.0
    with pytest.raises(EmptyGrid):
        fit_kernel_ridge(X, X[:, 0], ridge_grid=[])


def test_outcome_spec_names():
    assert OutcomeSpec.parse("poly").degree == 2
    assert OutcomeSpec.parse("poly3").degree == 3
    assert OutcomeSpec.parse("poly-lasso").method == "lasso"
    with pytest.raises(InvalidSpec):
        OutcomeSpec.parse("forest")


def test_outcome_spec_fit_and_oracle():
    X = np.array([[-1.0], [0.0], [1.0], [2.0]])
    Y = 1.0 + 2.0 * X[:, 0]
    stream = RandomStream(0)
    fit = OutcomeSpec.parse("ls").fit(X, Y, stream)
    assert_allclose(predict(fit, [[3.0]]), [7.0])
    oracle = OutcomeSpec.oracle(lambda Z: Z[:, 0] * 10.0)
    assert oracle.is_oracle
    assert_allclose(oracle.fit(X, Y, stream).predict([[0.5]]), [5.0])


def run_all_tests():
    """Run this suite through pytest with the console header"""
    print_section("OUTCOME MODEL TESTS")
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    raise SystemExit(run_all_tests())
