import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlimit.continuation import (OrbitCylinder, continue_family, envelope_check, period_profile,
                                     synthetic_cylinder)
from orbitlimit.errors import ContinuationError
from orbitlimit.orbit import find_periodic
from orbitlimit.symplectic import HamiltonianHomotopy, SymplecticStructure

TWO_PI = 2 * np.pi


def test_anisotropic_cylinder_reaches_target(aniso_cylinder):
    cyl = aniso_cylinder
    assert cyl.termination == "reached-target"
    assert cyl.sigma_end == pytest.approx(0.9)
    assert cyl.normalization == "reeb"
    for orb in cyl.orbits:
        # dH(X) = 1 on every level, so Reeb and Hamiltonian periods agree
        assert abs(orb.tau_hamiltonian - TWO_PI) < 1e-8
        assert abs(orb.tau - TWO_PI) < 1e-7
        assert orb.residuals["ode"] < 1e-6
        assert orb.floquet.unit_count == 2


def test_cylinder_loops_follow_the_analytic_radius(aniso_cylinder):
    for orb in aniso_cylinder.orbits:
        r = np.sqrt(1.0 + 2.0 * orb.sigma)
        assert np.max(np.abs(np.hypot(orb.samples[:, 0], orb.samples[:, 2]) - r)) < 1e-8
        assert np.max(np.abs(orb.samples[:, [1, 3]])) < 1e-8


def test_record_and_csv(aniso_cylinder):
    rec = json.loads(aniso_cylinder.to_json(sort_keys=True))
    again = OrbitCylinder.from_record(rec)
    assert np.array_equal(again.taus, aniso_cylinder.taus)
    lines = aniso_cylinder.to_csv(kappa=2.5).strip().splitlines()
    assert lines[0] == "sigma,tau,dtau,lower,upper"
    assert len(lines) == len(aniso_cylinder) + 1


def test_pendulum_fold_terminates_at_critical_energy():
    # H + 1/2 + sigma = 0 has librations while sigma < 1/2 = max of (cos q - 1/2) over q
    sys_ = HamiltonianHomotopy("0.5*p1^2 - cos(q1) + 0.5 + sigma", 1, X=["q1", "p1"])
    st_ = SymplecticStructure(1)
    start = find_periodic(sys_, st_, np.array([0.0, 1.0]), 6.7, 0.0, N=64)
    cyl = continue_family(start, sys_, st_, 0.6, max_step=0.1, N=64)
    assert cyl.termination == "newton-failure"
    assert abs(cyl.sigma_end - 0.5) <= 1e-3
    assert np.all(np.diff(cyl.taus) < 0)


def test_degenerate_start_is_rejected():
    sys_ = HamiltonianHomotopy("0.5*(q1^2 + q2^2 + p1^2 + p2^2) - 0.5 - sigma", 2)
    st_ = SymplecticStructure(2)
    start = find_periodic(sys_, st_, np.array([1.0, 0, 0, 0]), 6.0, 0.0, N=32)
    with pytest.raises(ContinuationError):
        continue_family(start, sys_, st_, 0.5)


def test_argument_validation(aniso_short, anisotropic):
    sys_, st_ = anisotropic
    with pytest.raises(ValueError):
        continue_family(aniso_short, sys_, st_, -0.1)
    with pytest.raises(ValueError):
        continue_family(aniso_short, sys_, st_, 0.5, max_step=0.01, min_step=0.1)


def test_period_profile_is_second_order():
    errs = []
    for count in (11, 21):
        s = np.linspace(0, 1, count) ** 1.3  # nonuniform grid
        _, _, d = period_profile((s, np.exp(2 * s)))
        errs.append(np.max(np.abs(d - 2 * np.exp(2 * s))))
    assert errs[1] < errs[0] / 3


def test_envelope_passes_on_certified_cylinder(aniso_cylinder):
    rep = envelope_check(aniso_cylinder, 2.5)
    assert rep.passed and rep.C == pytest.approx(aniso_cylinder.taus[0] * np.exp(2.5 * 0.9))


def test_blow_up_fixture_fails_envelope():
    cyl = synthetic_cylinder(np.linspace(0, 0.99, 60), lambda s: TWO_PI / (1 - s))
    rep = envelope_check(cyl, 2.0)
    assert not rep.passed and not rep.pointwise_ok and not rep.envelope_ok
    assert rep.first_violation is not None


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 5.0), st.floats(0.0, 0.95), st.floats(0.5, 10.0))
def test_exponential_profiles_inside_the_envelope_pass(kappa, ratio, tau0):
    rate = ratio * kappa
    cyl = synthetic_cylinder(np.linspace(0, 1, 15), lambda s: tau0 * np.exp(rate * s), N=16)
    assert envelope_check(cyl, kappa).passed


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 5.0), st.floats(1.0, 3.0), st.floats(0.5, 10.0))
def test_exponential_profiles_beyond_the_envelope_fail(kappa, excess, tau0):
    rate = kappa + excess
    cyl = synthetic_cylinder(np.linspace(0, 1, 15), lambda s: tau0 * np.exp(rate * s), N=16)
    assert not envelope_check(cyl, kappa).passed


def test_cylinder_validates_ordering():
    cyl = synthetic_cylinder([0.0, 0.5], lambda s: 1.0, N=16)
    with pytest.raises(ValueError):
        OrbitCylinder(cyl.orbits[::-1], 0.5, 0.0)
    with pytest.raises(ValueError):
        OrbitCylinder(cyl.orbits, 0.0, 0.5, termination="gave-up")
