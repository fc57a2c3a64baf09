#!/usr/bin/env python3
"""
Inference Test Suite
Plug-in variance, normal intervals and adjusted influence functions
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import norm

from drss.core import RandomStream, make_folds, validate_sample
from drss.errors import EmptyStratum, InvalidAlpha, SingularJacobian, UnsupportedAdjustment
from drss.inference import (
    adjusted_if,
    adjusted_if_mcar,
    adjusted_if_offset_logistic,
    adjusted_if_stratified,
    build_report,
    confidence_interval,
    err_diagnostics,
    variance_plugin,
)
from drss.linear_models import OutcomeSpec
from drss.mean_estimators import NuisancePredictions, estimate_dr, run_pipeline
from drss.propensity import McarPsFit, OffsetLogisticFit, PsSpec, StratifiedPsFit
from drss.reporting import print_section
from drss.sim import DgpSpec, generate


def _hand_sample():
    return validate_sample(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, np.nan, 4.0, np.nan])


def test_variance_hand_value():
    sample = _hand_sample()
    assert variance_plugin(np.ones(4), 0.5, sample.R, sample.Y, 3.0) == pytest.approx(6.0)


def test_variance_zero_residual():
    sample = validate_sample(np.zeros((3, 1)), [1, 0, 1], [2.0, np.nan, 2.0])
    assert variance_plugin(np.full(3, 2.0), 0.5, sample.R, sample.Y, 2.0) == 0.0


def test_interval_width():
    low, high = confidence_interval(0.0, 1.0, 100, 0.05)
    assert high == pytest.approx(0.1959964, abs=1e-7)
    assert low == pytest.approx(-high)
    assert high - low == pytest.approx(2 * norm.ppf(0.975) * 0.1)


def test_degenerate_interval():
    assert confidence_interval(1.5, 0.0, 10) == (1.5, 1.5)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_invalid_alpha(alpha):
    with pytest.raises(InvalidAlpha):
        confidence_interval(0.0, 1.0, 10, alpha)


def test_mcar_adjustment_hand_value():
    sample = _hand_sample()
    assert_allclose(adjusted_if_mcar(np.ones(4), 0.5, sample.R, sample.Y), [-2.0, 2.0, -2.0, 2.0])


def test_mcar_adjustment_vanishes_when_calibrated():
    sample = _hand_sample()
    assert_allclose(adjusted_if_mcar(np.full(4, 3.0), 0.5, sample.R, sample.Y), 0.0)


def _offset_preds(sample, m_hat, gamma):
    fit = OffsetLogisticFit(np.asarray(gamma, dtype=float), np.log(sample.pi_bar), sample.pi_bar)
    pi_hat = fit.predict(sample.X)
    return NuisancePredictions(np.asarray(m_hat, dtype=float), pi_hat, np.zeros(sample.n, dtype=int), (), (fit,))


def test_offset_adjustment_vanishes_with_zero_ipw_residual():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 2))
    R = (rng.random(200) < 0.3).astype(int)
    Y = np.where(R == 1, 1.0 + X[:, 0], np.nan)
    sample = validate_sample(X, R, Y)
    preds = _offset_preds(sample, np.zeros(200), [0.2, 0.5, -0.3])
    # m = R Y / pi row by row makes every IPW residual zero
    m_hat = sample.R * sample.observed_outcome() / preds.pi_hat
    assert_allclose(adjusted_if_offset_logistic(sample, preds, m_hat=m_hat), 0.0, atol=1e-12)


def test_offset_adjustment_matches_direct_formula():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, 2))
    R = (rng.random(300) < 0.2).astype(int)
    Y = np.where(R == 1, X[:, 0] ** 2, np.nan)
    sample = validate_sample(X, R, Y)
    m_hat = 0.5 + X[:, 1]
    preds = _offset_preds(sample, m_hat, [0.1, 0.4, 0.0])
    pi = preds.pi_hat
    design = np.column_stack([np.ones(300), X])
    J = sum(np.outer(x, x) * p * (1 - p) for x, p in zip(design, pi)) / 300
    residual = m_hat - sample.R * sample.observed_outcome() / pi
    left = (design * ((1 - pi) * residual)[:, None]).mean(axis=0)
    expected = design @ np.linalg.solve(J, left) * (sample.R - pi)
    assert_allclose(adjusted_if_offset_logistic(sample, preds), expected, rtol=1e-10, atol=1e-12)


def test_offset_adjustment_singular_jacobian():
    X = np.column_stack([np.ones(20), np.ones(20)])
    R = np.array([1, 0] * 10)
    sample = validate_sample(X, R, np.where(R == 1, 1.0, np.nan))
    preds = _offset_preds(sample, np.zeros(20), [0.0, 0.0, 0.0])
    with pytest.raises(SingularJacobian):
        adjusted_if_offset_logistic(sample, preds)


def test_penalized_fit_has_no_adjustment():
    sample = _hand_sample()
    fit = OffsetLogisticFit(np.zeros(2), np.log(0.5), 0.5, penalty=0.1)
    preds = NuisancePredictions(np.ones(4), np.full(4, 0.5), np.zeros(4, dtype=int), (), (fit,))
    with pytest.raises(UnsupportedAdjustment):
        adjusted_if(sample, preds)


def test_stratified_adjustment_vanishes_with_zero_ipw_residual():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((100, 1))
    delta = (rng.random(100) < 0.5).astype(int)
    R = (rng.random(100) < 0.4).astype(int)
    Y = np.where(R == 1, X[:, 0], np.nan)
    sample = validate_sample(X, R, Y, delta)
    fit = StratifiedPsFit(0.3, 0.5, OffsetLogisticFit(np.array([0.0, 0.7]), 0.0, 1.0))
    pi_hat = fit.predict(X)
    m_hat = sample.R * sample.observed_outcome() / pi_hat
    preds = NuisancePredictions(m_hat, pi_hat, np.zeros(100, dtype=int), (), (fit,), fit.p_delta(X))
    assert_allclose(adjusted_if_stratified(sample, preds), 0.0, atol=1e-12)


def test_stratified_adjustment_single_stratum():
    sample = validate_sample(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, np.nan, 4.0, np.nan], delta=[1, 1, 1, 1])
    preds = NuisancePredictions(np.ones(4), np.full(4, 0.5), np.zeros(4, dtype=int))
    with pytest.raises(EmptyStratum):
        adjusted_if_stratified(sample, preds)


def test_err_diagnostics_exact():
    preds = NuisancePredictions(np.array([1.0, 2.0]), np.array([0.1, 0.2]), np.zeros(2, dtype=int))
    assert err_diagnostics(preds, [1.0, 2.0], [0.1, 0.2]) == (0.0, 0.0)
    assert err_diagnostics(preds) == (None, None)


def test_report_hand_values():
    sample = _hand_sample()
    estimate = estimate_dr(sample, np.ones(4), np.full(4, 0.5))
    preds = NuisancePredictions(np.ones(4), np.full(4, 0.5), np.zeros(4, dtype=int), (), (McarPsFit(0.5),))
    report = build_report(sample, estimate, preds, adjust=True)
    assert report.theta == pytest.approx(3.0)
    assert report.v_hat == pytest.approx(6.0)
    assert report.ci[1] - report.ci[0] == pytest.approx(2 * 1.959964 * np.sqrt(6.0 / 4), rel=1e-6)
    # psi + IF_pi = (-2, 0, 2, 0)
    assert report.v_hat_adjusted == pytest.approx(2.0)
    assert report.a_hat_inv == pytest.approx(2.0)


def test_adjusted_interval_on_misspecified_outcome():
    spec = DgpSpec.from_setting("d", 4000, 3, 0.1)
    draw = generate(spec, RandomStream(5).derive(spec.setting_id, 0).derive("data"))
    sample = draw.sample
    plan = make_folds(sample.n, 5, seed=1)
    preds, estimate = run_pipeline(sample, plan, OutcomeSpec.parse("ls"), PsSpec.parse("logistic"))
    report = build_report(sample, estimate, preds, adjust=True, true_m=draw.m_values, true_pi=draw.pi_values)
    assert report.ci_adjusted is not None
    assert np.isfinite(report.v_hat_adjusted) and report.v_hat_adjusted > 0
    assert report.err_m > 0.5 and report.err_pi < 0.5


@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_report_interval_is_wald_interval(alpha):
    spec = DgpSpec.from_setting("c", 3000, 3, 0.1)
    sample = generate(spec, RandomStream(11).derive(spec.setting_id, 0).derive("data")).sample
    preds, estimate = run_pipeline(sample, make_folds(sample.n, 5, seed=2), OutcomeSpec.parse("ls"), PsSpec.parse("logistic"))
    report = build_report(sample, estimate, preds, alpha=alpha)
    assert report.v_hat == pytest.approx(np.mean(estimate.psi ** 2), rel=1e-10)
    half_width = norm.ppf(1 - alpha / 2) * np.sqrt(report.v_hat / sample.n)
    assert_allclose(report.ci, [report.theta - half_width, report.theta + half_width], rtol=1e-10, atol=1e-12)


def run_all_tests():
    """Run this suite through pytest with the console header"""
    print_section("INFERENCE TESTS")
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    raise SystemExit(run_all_tests())
