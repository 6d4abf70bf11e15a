import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlimit.errors import DomainError, LevelSetError, StabilityViolation
from orbitlimit.symplectic import (HamiltonianField, HamiltonianHomotopy, PhasePoint,
                                   SymplecticStructure, check_stability, f_sigma,
                                   hamiltonian_vector_field, liouville_form, normalize_hamiltonian,
                                   project_to_level, reeb_field, sample_level_set,
                                   stability_residual)

MAGNETIC = SymplecticStructure(2, {(0, 1): "1 + 0.5*cos(q1)"})
MECH = HamiltonianHomotopy("0.5*(p1^2 + p2^2) + 0.3*cos(q1)*sin(q2) - sigma", 2)

# deliberately non-stabilizing: adds a shear to the radial Liouville field
SHEARED = HamiltonianHomotopy("0.5*(q1^2 + q2^2 + p1^2 + p2^2) - 0.5", 2,
                              X=["0.5*q1 + 0.4*p2", "0.5*q2", "0.5*p1", "0.5*p2 - 0.4*q1"])

states = st.lists(st.floats(-2, 2), min_size=4, max_size=4).map(np.array)


@settings(max_examples=50, deadline=None)
@given(states)
def test_hamiltonian_field_contracts_to_minus_dH(x):
    for structure in (SymplecticStructure(2), MAGNETIC):
        v = hamiltonian_vector_field(MECH, structure, x, 0.3)
        _, g = MECH.gradient(x, 0.3)
        W = structure.form_matrix(x[:2])
        assert np.allclose(W.T @ v, -g, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(states)
def test_field_jacobian_matches_differences(x):
    field = HamiltonianField(MECH, MAGNETIC, 0.2)
    _, J = field.with_jacobian(x)
    h = 1e-6
    fd = np.column_stack([(field(x + h * e) - field(x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(J, fd, atol=1e-8)


def test_form_checks():
    assert MAGNETIC.check(np.random.default_rng(0).uniform(-3, 3, (10, 2)))
    W = MAGNETIC.form_matrix(np.array([0.3, 0.0]))
    assert np.allclose(W, -W.T)
    with pytest.raises(ValueError):
        SymplecticStructure(2, {(1, 0): "1"})
    with pytest.raises(ValueError):
        SymplecticStructure(2, {(0, 1): "p1"})
    with pytest.raises(DomainError):
        SymplecticStructure(2, {(0, 1): "1/q1"}).alpha_matrix(np.zeros(2))


def test_phase_point_roundtrip():
    pt = PhasePoint.from_state([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(pt.q, [1, 2]) and np.allclose(pt.p, [3, 4])
    assert np.allclose(pt.state, [1, 2, 3, 4])


def test_sphere_reeb_is_twice_hamiltonian_field(sphere):
    sys_, st_ = sphere
    x = np.array([0.6, 0.0, 0.0, 0.8])
    assert f_sigma(sys_, st_, x, 0.0) == pytest.approx(0.5, abs=1e-14)
    R = reeb_field(sys_, st_, x, 0.0)
    assert np.allclose(R, 2 * hamiltonian_vector_field(sys_, st_, x, 0.0))
    assert liouville_form(sys_, st_, x, 0.0) @ R == pytest.approx(1.0, abs=1e-14)


def test_contact_case_reeb_equals_hamiltonian_field(anisotropic):
    sys_, st_ = anisotropic
    for x in sample_level_set(sys_, 0.4, 5, seed=2):
        assert np.allclose(reeb_field(sys_, st_, x, 0.4), hamiltonian_vector_field(sys_, st_, x, 0.4))


def test_level_checks(sphere):
    sys_, st_ = sphere
    with pytest.raises(LevelSetError):
        f_sigma(sys_, st_, np.array([2.0, 0, 0, 0]), 0.0)
    x = project_to_level(sys_, np.array([2.0, 1.0, 0, 0]), 0.0)
    assert abs(sys_.value(x, 0.0)) < 1e-12


def test_stability_residual_vanishes_for_liouville_field(sphere):
    sys_, st_ = sphere
    pts = sample_level_set(sys_, 0.0, 100, seed=1)
    assert max(stability_residual(sys_, st_, x, 0.0) for x in pts) <= 1e-8
    assert check_stability(sys_, st_, 0.0, pts)["f_min"] == pytest.approx(0.5)


def test_sheared_field_is_flagged():
    st_ = SymplecticStructure(2)
    pts = sample_level_set(SHEARED, 0.0, 10, seed=3)
    assert max(stability_residual(SHEARED, st_, x, 0.0) for x in pts) > 1e-2
    with pytest.raises(StabilityViolation):
        check_stability(SHEARED, st_, 0.0, pts)


def test_nonpositive_dH_of_X_raises():
    sys_ = HamiltonianHomotopy("0.5*(q1^2 + p1^2) - 0.5", 1, X=["-q1", "-p1"])
    with pytest.raises(StabilityViolation):
        f_sigma(sys_, SymplecticStructure(1), np.array([1.0, 0.0]), 0.0)


def test_normalized_hamiltonian_gives_unit_lambda(sphere):
    sys_, st_ = sphere
    norm = normalize_hamiltonian(sys_, 4.0, sample_level_set(sys_, 0.0, 4))
    for x in sample_level_set(sys_, 0.0, 10, seed=5):
        assert abs(norm.value(x, 0.0)) < 1e-10
        v = hamiltonian_vector_field(norm, st_, x, 0.0)
        assert liouville_form(norm, st_, x, 0.0) @ v == pytest.approx(1.0, abs=1e-8)


def test_normalized_hessian_matches_gradient_differences(sphere):
    sys_, _ = sphere
    norm = normalize_hamiltonian(sys_, 3.0)
    x = np.array([0.9, 0.2, -0.1, 0.3])
    _, g, H = norm.jet(x, 0.0)
    h = 1e-6
    fd = np.column_stack([(norm.gradient(x + h * e, 0.0)[1] - norm.gradient(x - h * e, 0.0)[1]) / (2 * h)
                          for e in np.eye(4)])
    assert np.allclose(H, fd, atol=1e-7)


def test_magnetic_flow_conserves_energy():
    from orbitlimit.flow import integrate

    field = HamiltonianField(MECH, MAGNETIC, 0.0)
    x0 = np.array([0.1, 0.2, 0.5, -0.3])
    traj = integrate(field, x0, 10.0, tol=1e-11, energy=field.energy)
    assert traj.energy_drift < 1e-9
