import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmckit.adapt import (
    TuningFailed,
    default_accept_target,
    estimate_mass,
    sample_covariance,
    suggest_trajectory,
    tune_step_size,
    warmup_pipeline,
)
from hmckit.errors import ContractViolation, EstimationError
from hmckit.hamiltonian import DenseMass, DiagonalMass, IdentityMass
from hmckit.targets import GaussianTarget

from test_hmc import _stationary_acceptance


def _two_pass(x):
    mean = sum(x) / len(x)
    acc = np.zeros((x.shape[1], x.shape[1]))
    for row in x:
        acc += np.outer(row - mean, row - mean)
    return acc / (len(x) - 1)


def _non_increasing(report, slack=0.02):
    probes = sorted(report.probes, key=lambda p: p.step_size)
    acc = [p.acceptance for p in probes]
    return all(b <= a + slack for a, b in zip(acc, acc[1:]))


def test_hand_computed_covariance():
    est = estimate_mass(np.array([[0.0], [2.0]]), "diagonal", ridge=0.0)
    assert est.covariance[0] == 2.0
    assert est.mass.diagonal[0] == 0.5


@settings(max_examples=50)
@given(arrays(float, (30, 3), elements=st.floats(-1e3, 1e3)))
def test_covariance_matches_two_pass(x):
    ref = _two_pass(x)
    np.testing.assert_allclose(sample_covariance(x), ref, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_diagonal_mass_recovers_inverse_variances():
    x = np.random.default_rng(0).standard_normal((10000, 2)) * [1.0, 10.0]
    est = estimate_mass(x, "diagonal")
    np.testing.assert_allclose(est.mass.diagonal, [1.0, 0.01], rtol=0.05)
    assert isinstance(est.mass, DiagonalMass)


def test_dense_mass_is_inverse_covariance():
    cov = np.array([[2.0, 0.9], [0.9, 1.0]])
    x = np.random.default_rng(1).multivariate_normal([0, 0], cov, size=20000)
    est = estimate_mass(x, "dense")
    assert isinstance(est.mass, DenseMass)
    np.testing.assert_allclose(est.mass.matrix, np.linalg.inv(est.covariance), rtol=1e-10)
    np.testing.assert_allclose(est.covariance, cov, atol=0.06)


def test_estimation_errors():
    with pytest.raises(EstimationError, match="coordinate 1"):
        estimate_mass(np.column_stack([np.arange(5.0), np.ones(5)]), "diagonal", ridge=0.0)
    with pytest.raises(EstimationError):
        estimate_mass(np.ones((2, 3)), "dense")
    with pytest.raises(EstimationError):
        estimate_mass(np.array([[1.0]]), "diagonal")


def test_default_ridge_rescues_constant_coordinate():
    x = np.column_stack([np.arange(10.0), np.ones(10)])
    est = estimate_mass(x, "diagonal")
    assert est.ridge == pytest.approx(1e-8 * np.var(np.arange(10.0), ddof=1) / 2)
    assert np.all(est.mass.diagonal > 0)


def test_tuning_hits_high_target_near_small_step():
    report = tune_step_size(GaussianTarget(), None, 10, 0.9996, rng=1)
    assert report.converged
    assert report.step_size == pytest.approx(0.1, rel=0.25)
    assert abs(report.acceptance - 0.9996) < 1e-3


def test_tuning_without_resonance_lands_near_one():
    # One leapfrog step: acceptance falls monotonically with the step size and crosses 0.9 near 1.08.
    report = tune_step_size(GaussianTarget(), None, 1, 0.90, rng=1)
    assert report.step_size == pytest.approx(1.0, rel=0.15)
    assert _non_increasing(report)


def test_tuning_with_ten_steps_reaches_target():
    # With ten steps the acceptance curve oscillates in the step size, so several crossings of 0.9 exist
    # between 1 and 2. The search must end on one of them.
    report = tune_step_size(GaussianTarget(), None, 10, 0.90, rng=1)
    assert report.converged
    assert 0.5 <= report.step_size <= 2.0
    assert _stationary_acceptance(report.step_size, 10) == pytest.approx(0.90, abs=0.05)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_probe_trace_is_monotone_for_single_step(seed):
    assert _non_increasing(tune_step_size(GaussianTarget(3), None, 1, 0.75, rng=seed))


def test_probes_are_common_random_numbers():
    a = tune_step_size(GaussianTarget(2), None, 5, 0.8, rng=7)
    b = tune_step_size(GaussianTarget(2), None, 5, 0.8, rng=7)
    assert a == b


@pytest.mark.parametrize("target", [1.0, 0.05, 1.5])
def test_target_outside_range_is_rejected(target):
    with pytest.raises(ContractViolation):
        tune_step_size(GaussianTarget(), None, 10, target)


def test_failure_to_bracket_is_reported():
    report = tune_step_size(GaussianTarget(cov=[1e30]), None, 1, 0.8, rng=0)
    assert not report.converged
    assert "bracket" in report.message
    assert len(report.probes) == 41


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_half_period_suggestion(eps):
    s = suggest_trajectory(GaussianTarget(), None, eps, 1000)
    assert not s.truncated
    assert s.num_steps * eps == pytest.approx(math.pi, rel=0.15)


def test_half_period_suggestion_values():
    assert abs(suggest_trajectory(GaussianTarget(), None, 0.1, 1000).num_steps - 31) <= 3
    assert suggest_trajectory(GaussianTarget(), None, math.pi, 1000).num_steps == 1
    short = suggest_trajectory(GaussianTarget(), None, 0.1, 5)
    assert short.truncated and short.num_steps == 5


def test_half_period_uses_the_mass():
    # N(0, 4) with mass 1/4 has the same half period as the standard normal with unit mass.
    s = suggest_trajectory(GaussianTarget(cov=[4.0]), DiagonalMass([0.25]), 0.1, 1000)
    assert s.num_steps * 0.1 == pytest.approx(math.pi, rel=0.15)
    naive = suggest_trajectory(GaussianTarget(cov=[4.0]), IdentityMass(1), 0.1, 1000)
    assert naive.num_steps * 0.1 == pytest.approx(2 * math.pi, rel=0.15)


def test_default_targets():
    assert default_accept_target(8) == 0.85
    assert default_accept_target(20) == 0.651


def test_pipeline_on_standard_normal_is_near_noop():
    result = warmup_pipeline(GaussianTarget(), 2000, rng=3)
    mass, cfg, chain = result
    assert mass.diagonal[0] == pytest.approx(1.0, rel=0.15)
    assert chain.iterations == 2000
    assert cfg.step_size == pytest.approx(result.stage2.step_size)


def test_pipeline_preconditions_scaled_gaussian():
    # A narrow coordinate (sd 0.02) caps the identity-mass step; whitening removes the cap.
    result = warmup_pipeline(GaussianTarget(cov=[4e-4, 1.0]), 4000, accept_target=0.8, rng=2, tune_steps=20,
                             num_steps=5)
    np.testing.assert_allclose(result.mass.diagonal, [2500.0, 1.0], rtol=0.3)
    assert result.stage2.step_size > 10 * result.stage1.step_size


def test_pipeline_validation_and_failure():
    with pytest.raises(ContractViolation):
        warmup_pipeline(GaussianTarget(), 10)
    with pytest.raises(TuningFailed) as info:
        warmup_pipeline(GaussianTarget(cov=[1e30]), 1000, rng=0, tune_steps=1)
    assert info.value.stage == "stage 1"
    assert "stage1" in info.value.partial
