#!/usr/bin/env python3
"""
Mean Estimator Test Suite
Naive, regression, IPW and cross-fitted doubly robust estimators
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from drss.core import CrossFitPlan, RandomStream, make_folds, validate_sample
from drss.errors import DimensionMismatch, NoLabeledInTrainingFold, NonpositivePropensity
from drss.inference import variance_plugin
from drss.linear_models import OutcomeSpec
from drss.mean_estimators import (
    EstimatorKind,
    cross_fit_outcome,
    cross_fit_propensity,
    estimate_dr,
    estimate_ipw,
    estimate_reg,
    naive_labeled_mean,
    run_pipeline,
)
from drss.propensity import PsSpec
from drss.reporting import print_section
from drss.sim import DgpSpec, generate


def _hand_sample():
    return validate_sample(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, np.nan, 4.0, np.nan])


def test_naive_mean():
    sample = validate_sample(np.zeros((3, 1)), [1, 0, 1], [2.0, np.nan, 4.0])
    estimate = naive_labeled_mean(sample)
    assert estimate.theta == pytest.approx(3.0)
    assert estimate.kind is EstimatorKind.NAIVE
    assert_allclose(estimate.psi, [-1.5, 0.0, 1.5])


def test_naive_all_labeled():
    sample = validate_sample(np.zeros((3, 1)), [1, 1, 1], [1.0, 2.0, 6.0])
    assert naive_labeled_mean(sample).theta == pytest.approx(3.0)


def test_regression_estimator():
    sample = _hand_sample()
    assert estimate_reg(sample, np.full(4, 1.7)).theta == pytest.approx(1.7)
    assert estimate_reg(sample, [1.0, 2.0, 3.0, 4.0]).theta == pytest.approx(2.5)


def test_ipw_hand_value():
    sample = validate_sample(np.zeros((2, 1)), [1, 0], [2.0, np.nan])
    assert estimate_ipw(sample, [0.5, 0.5]).theta == pytest.approx(2.0)


def test_ipw_with_labeled_fraction_is_naive():
    rng = np.random.default_rng(0)
    R = (rng.random(50) < 0.3).astype(int)
    R[0] = 1
    Y = np.where(R == 1, rng.standard_normal(50), np.nan)
    sample = validate_sample(rng.standard_normal((50, 2)), R, Y)
    ipw = estimate_ipw(sample, np.full(50, sample.pi_bar))
    assert ipw.theta == pytest.approx(naive_labeled_mean(sample).theta, rel=1e-12)


def test_dr_hand_value():
    estimate = estimate_dr(_hand_sample(), np.ones(4), np.full(4, 0.5))
    assert estimate.theta == pytest.approx(3.0)
    assert_allclose(estimate.psi, [0.0, -2.0, 4.0, -2.0])
    assert estimate.kind is EstimatorKind.DRSS


def test_dr_full_labeling_ignores_outcome_model():
    sample = validate_sample(np.zeros((3, 1)), [1, 1, 1], [1.0, 2.0, 6.0])
    assert estimate_dr(sample, [10.0, -4.0, 0.3], np.ones(3)).theta == pytest.approx(3.0)


def test_dr_zero_model_is_ipw():
    sample = _hand_sample()
    pi = np.full(4, 0.5)
    assert estimate_dr(sample, np.zeros(4), pi).theta == pytest.approx(estimate_ipw(sample, pi).theta)


def test_dr_input_guards():
    sample = _hand_sample()
    with pytest.raises(NonpositivePropensity):
        estimate_dr(sample, np.ones(4), [0.5, 0.0, 0.5, 0.5])
    with pytest.raises(DimensionMismatch):
        estimate_dr(sample, np.ones(3), np.full(4, 0.5))


def _setting_a(N=600, pi=0.2, rep=0):
    spec = DgpSpec.from_setting("a", N, 4, pi)
    return generate(spec, RandomStream(99).derive(spec.setting_id, rep).derive("data"))


def test_pipeline_reproducible():
    sample = _setting_a().sample
    plan = make_folds(sample.n, 2, seed=5)
    outcome, ps = OutcomeSpec.parse("ls"), PsSpec.parse("constant")
    first = run_pipeline(sample, plan, outcome, ps)[1]
    second = run_pipeline(sample, plan, outcome, ps)[1]
    assert first.theta == second.theta
    assert_array_equal(first.psi, second.psi)


def test_pipeline_parallel_matches_serial():
    sample = _setting_a().sample
    plan = make_folds(sample.n, 3, seed=2)
    outcome, ps = OutcomeSpec.parse("lasso"), PsSpec.parse("logistic")
    serial = run_pipeline(sample, plan, outcome, ps, n_jobs=1)[1]
    parallel = run_pipeline(sample, plan, outcome, ps, n_jobs=2)[1]
    assert serial.theta == parallel.theta


def test_cross_fit_is_out_of_fold():
    sample = _setting_a().sample
    plan = make_folds(sample.n, 4, seed=1)
    fitted = cross_fit_outcome(sample, plan, OutcomeSpec.parse("ls"))
    assert len(fitted.fits) == 4
    for k, _, fold in plan.folds():
        assert_allclose(fitted.values[fold], fitted.fits[k].predict(sample.X[fold]))
    pi = cross_fit_propensity(sample, plan, PsSpec.parse("constant"))
    for k, train, fold in plan.folds():
        assert_allclose(pi.values[fold], sample.R[train].mean())


def test_fold_without_labels_names_fold():
    R = np.array([1, 1, 0, 0, 0, 0])
    sample = validate_sample(np.arange(6.0)[:, None], R, [1.0, 2.0] + [np.nan] * 4)
    plan = CrossFitPlan(3, np.array([0, 0, 1, 1, 2, 2]), seed=0)
    with pytest.raises(NoLabeledInTrainingFold) as info:
        cross_fit_outcome(sample, plan, OutcomeSpec.parse("ls"))
    assert info.value.context_dict()["fold"] == 0


def test_oracle_pipeline_is_unbiased_on_average():
    spec = DgpSpec.from_setting("a", 2000, 4, 0.1)
    thetas = []
    for rep in range(40):
        draw = generate(spec, RandomStream(3).derive(spec.setting_id, rep).derive("data"))
        plan = make_folds(draw.sample.n, 2, seed=rep)
        _, estimate = run_pipeline(
            draw.sample, plan, OutcomeSpec.oracle(draw.true_m), PsSpec.oracle(draw.true_pi)
        )
        assert estimate.kind is EstimatorKind.DR_KNOWN_PS
        thetas.append(estimate.theta)
    assert abs(np.mean(thetas) - spec.theta0) < 4 * np.std(thetas) / np.sqrt(40)


def test_scores_are_centered_and_give_plugin_variance():
    sample = _setting_a(N=800, pi=0.15, rep=2).sample
    plan = make_folds(sample.n, 5, seed=8)
    preds, estimate = run_pipeline(sample, plan, OutcomeSpec.parse("poly"), PsSpec.parse("logistic"))
    assert abs(estimate.psi.mean()) < 1e-12
    v_hat = variance_plugin(preds.m_hat, preds.pi_hat, sample.R, sample.Y, estimate.theta)
    assert v_hat == pytest.approx(np.mean(estimate.psi ** 2), rel=1e-10)


def test_pipeline_invariant_to_row_order_and_fold_names():
    sample = _setting_a(N=900, pi=0.2, rep=3).sample
    plan = make_folds(sample.n, 4, seed=6)
    perm = np.random.default_rng(12).permutation(sample.n)
    relabel = np.array([2, 0, 3, 1])
    shuffled = validate_sample(sample.X[perm], sample.R[perm], sample.Y[perm])
    shuffled_plan = CrossFitPlan(4, relabel[plan.assignment[perm]], plan.seed)
    outcome, ps = OutcomeSpec.parse("ls"), PsSpec.parse("logistic")
    base = run_pipeline(sample, plan, outcome, ps)[1]
    moved = run_pipeline(shuffled, shuffled_plan, outcome, ps)[1]
    assert moved.theta == pytest.approx(base.theta, rel=1e-8)
    assert_allclose(moved.psi, base.psi[perm], atol=1e-8)


def run_all_tests():
    """Run this suite through pytest with the console header"""
    print_section("MEAN ESTIMATOR TESTS")
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    raise SystemExit(run_all_tests())
