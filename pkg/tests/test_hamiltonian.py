import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hmckit.errors import ContractViolation, UnsupportedConfiguration
from hmckit.hamiltonian import (
    DenseMass,
    DiagonalMass,
    Divergence,
    IdentityMass,
    LeapfrogConfig,
    PhaseState,
    gaussian_flow,
    hamiltonian,
    jacobian_logdet,
    kinetic_energy,
    leapfrog,
    leapfrog_jacobian_logdet,
    leapfrog_trajectory,
    momentum_flip,
)
from hmckit.targets import GaussianTarget, LabeledDataset, LogisticPosterior, TargetDensity

coord = st.floats(-3, 3, allow_nan=False)
SPD = np.array([[2.0, 0.5], [0.5, 1.0]])


def test_hamiltonian_of_standard_normal():
    z = PhaseState([1.0], [2.0])
    assert hamiltonian(GaussianTarget(), IdentityMass(1), z) == pytest.approx(2.5)


def test_kinetic_energy_forms_agree():
    p = np.array([0.3, -1.2])
    m = np.diag([2.0, 0.5])
    expected = 0.5 * p @ np.linalg.solve(m, p)
    assert kinetic_energy(DiagonalMass([2.0, 0.5]), p) == pytest.approx(expected)
    assert kinetic_energy(DenseMass(m), p) == pytest.approx(expected)
    assert kinetic_energy(DenseMass(inverse=np.linalg.inv(m)), p) == pytest.approx(expected)


@pytest.mark.parametrize("mass", [DenseMass(SPD), DenseMass(inverse=np.linalg.inv(SPD))])
def test_dense_momentum_covariance(mass):
    draws = np.array([mass.sample(np.random.default_rng(i)) for i in range(20000)])
    np.testing.assert_allclose(np.cov(draws.T), SPD, atol=0.06)


def test_mass_validation():
    with pytest.raises(ContractViolation):
        DiagonalMass([1.0, 0.0])
    with pytest.raises(ContractViolation):
        DenseMass([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ContractViolation):
        DenseMass([[1.0, 0.1], [0.0, 1.0]])


def test_leapfrog_config_validation():
    with pytest.raises(ContractViolation):
        LeapfrogConfig(0.0, 10)
    with pytest.raises(ContractViolation):
        LeapfrogConfig(0.1, 0)
    assert LeapfrogConfig(0.1, 10).trajectory_length == pytest.approx(1.0)


def test_leapfrog_single_step_by_hand():
    # Half kick, drift, half kick on x^2 / 2 from (1, 0) with eps = 0.5.
    z = leapfrog(GaussianTarget(), IdentityMass(1), PhaseState([1.0], [0.0]), LeapfrogConfig(0.5, 1))
    p_half = -0.25
    x1 = 1.0 + 0.5 * p_half
    assert z.position[0] == pytest.approx(x1)
    assert z.momentum[0] == pytest.approx(p_half - 0.25 * x1)


def test_leapfrog_energy_error_matches_closed_form():
    # One leapfrog step on the unit oscillator is kick(-e/2) drift(e) kick(-e/2); ten steps of 0.1 from
    # (1, 0.5) change the energy by this value (matrix-power oracle).
    z = PhaseState([1.0], [0.5])
    out = leapfrog(GaussianTarget(), IdentityMass(1), z, LeapfrogConfig(0.1, 10))
    dh = 0.5 * (out.position[0] ** 2 + out.momentum[0] ** 2) - 0.625
    assert dh == pytest.approx(-9.481433235136727e-05, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(coord, coord, st.floats(0.01, 1.5), st.integers(1, 40))
def test_reversibility_one_dimensional(x, p, eps, n):
    target, mass = GaussianTarget(), IdentityMass(1)
    cfg = LeapfrogConfig(eps, n)
    z = PhaseState([x], [p])
    back = momentum_flip(leapfrog(target, mass, momentum_flip(leapfrog(target, mass, z, cfg)), cfg))
    np.testing.assert_allclose(back.as_vector(), z.as_vector(), atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(coord, min_size=4, max_size=4), st.floats(0.01, 0.8), st.integers(1, 30))
def test_reversibility_with_dense_mass(v, eps, n):
    target = GaussianTarget(cov=np.array([[1.0, 0.6], [0.6, 2.0]]))
    mass = DenseMass(SPD)
    cfg = LeapfrogConfig(eps, n)
    z = PhaseState(v[:2], v[2:])
    back = momentum_flip(leapfrog(target, mass, momentum_flip(leapfrog(target, mass, z, cfg)), cfg))
    np.testing.assert_allclose(back.as_vector(), z.as_vector(), atol=1e-10)


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(x=coord, p=coord, eps=st.floats(0.05, 1.0), n=st.integers(1, 20))
def test_leapfrog_preserves_volume_but_euler_does_not(euler, x, p, eps, n):
    target, mass = GaussianTarget(), IdentityMass(1)
    z = PhaseState([x], [p])
    assert abs(leapfrog_jacobian_logdet(target, mass, z, LeapfrogConfig(eps, n))) < 1e-5
    euler_logdet = jacobian_logdet(lambda w: euler(target, w, eps, n), z)
    assert euler_logdet == pytest.approx(n * math.log1p(eps * eps), rel=1e-5)


def test_volume_preservation_on_nonlinear_target():
    rng = np.random.default_rng(3)
    data = LabeledDataset.from_covariates(rng.standard_normal(40), (rng.random(40) < 0.5).astype(float))
    target = LogisticPosterior(data, 4.0)
    z = PhaseState(rng.standard_normal(2), rng.standard_normal(2))
    assert abs(leapfrog_jacobian_logdet(target, IdentityMass(2), z, LeapfrogConfig(0.2, 15))) < 1e-5


def test_gaussian_flow_is_a_rotation():
    z = PhaseState([2.0], [-2.0])
    w = gaussian_flow(z, math.pi / 2)
    np.testing.assert_allclose(w.as_vector(), [-2.0, -2.0], atol=1e-12)
    full = gaussian_flow(z, 2 * math.pi)
    np.testing.assert_allclose(full.as_vector(), z.as_vector(), atol=1e-12)
    with pytest.raises(UnsupportedConfiguration):
        gaussian_flow(PhaseState([1.0, 1.0], [0.0, 0.0]), 1.0)


def test_leapfrog_converges_to_exact_flow():
    z = PhaseState([1.0], [0.3])
    exact = gaussian_flow(z, 1.0).as_vector()
    errs = [np.abs(leapfrog(GaussianTarget(), IdentityMass(1), z, LeapfrogConfig(1.0 / n, n)).as_vector()
                   - exact).max() for n in (10, 20, 40)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_trajectory_rows_match_leapfrog():
    target, mass = GaussianTarget(), IdentityMass(1)
    z = PhaseState([2.0], [-2.0])
    xs, ps = leapfrog_trajectory(target, mass, z, LeapfrogConfig(0.1, 31))
    assert xs.shape == (32, 1)
    end = leapfrog(target, mass, z, LeapfrogConfig(0.1, 31))
    np.testing.assert_allclose([xs[-1, 0], ps[-1, 0]], end.as_vector(), atol=1e-12)


def test_divergence_is_raised():
    class Exploding(TargetDensity):
        name = "exploding"
        dim = 1

        def _log_density(self, x):
            return float(x[0] ** 4)

        def _grad(self, x):
            return 4.0 * x ** 3

    with pytest.raises(Divergence):
        leapfrog(Exploding(), IdentityMass(1), PhaseState([3.0], [0.0]), LeapfrogConfig(1.0, 50))


def test_jacobian_limited_to_small_dimension():
    with pytest.raises(UnsupportedConfiguration):
        leapfrog_jacobian_logdet(GaussianTarget(6), IdentityMass(6), PhaseState(np.zeros(6), np.zeros(6)),
                                 LeapfrogConfig(0.1, 1))


def _symplectic_euler(target, z, eps, n):
    x, p = z.position.copy(), z.momentum.copy()
    for _ in range(n):
        p = p + eps * target.grad_log_density(x)
        x = x + eps * p
    return PhaseState(x, p)


def test_momentum_first_euler_keeps_volume_but_is_not_reversible():
    # Updating x with the new momentum gives a unit Jacobian; only the reversibility check separates it from
    # leapfrog. Explicit Euler fails both.
    target = GaussianTarget()
    z = PhaseState([1.0], [0.5])
    step = lambda w: _symplectic_euler(target, w, 0.3, 5)  # noqa: E731
    assert abs(jacobian_logdet(step, z)) < 1e-8
    back = momentum_flip(step(momentum_flip(step(z))))
    assert np.abs(back.as_vector() - z.as_vector()).max() > 1e-2


def test_explicit_euler_is_not_reversible(euler):
    target = GaussianTarget()
    z = PhaseState([1.0], [0.5])
    back = momentum_flip(euler(target, momentum_flip(euler(target, z, 0.3, 5)), 0.3, 5))
    assert np.abs(back.as_vector() - z.as_vector()).max() > 1e-2
