from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlimit.action import (StabilityBounds, TubularChart, build_tubular, criticality_components,
                               default_epsilon, estimate_kappa, extended_hamiltonian,
                               extended_one_form, period_bound_certificate, rabinowitz_action)
from orbitlimit.continuation import synthetic_cylinder
from orbitlimit.errors import ChartError, SeparationError
from orbitlimit.mollify import Mollifiers, SmoothClamp, smooth_step
from orbitlimit.orbit import ParametrisedOrbit, find_periodic, reeb_normalize
from orbitlimit.symplectic import HamiltonianHomotopy, SymplecticStructure, liouville_form

EPS = 0.1


@pytest.fixture(scope="module")
def chart(sphere):
    sys_, st_ = sphere
    pts = np.array([[1.0, 0, 0, 0], [0, 0.6, 0.8, 0]])
    return build_tubular(sys_, st_, 0.0, EPS, pts)


@pytest.fixture(scope="module")
def reeb_orbit(sphere):
    sys_, st_ = sphere
    orb = find_periodic(sys_, st_, np.array([1.0, 0, 0, 0]), 6.0, 0.0, N=256)
    return reeb_normalize(orb, sys_, st_)


def test_chart_moves_energy_at_unit_rate(sphere, chart):
    sys_, _ = sphere
    x = np.array([1.0, 0, 0, 0])
    p = chart.psi(0.1, x)
    assert sys_.value(p, 0.0) == pytest.approx(0.1, abs=1e-8)
    assert chart.r(p) == pytest.approx(0.1, abs=1e-8)
    assert np.allclose(chart.foot(p), x, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.04, 0.04), st.floats(0, 2 * np.pi))
def test_foot_inverts_the_chart(sphere, chart, r, angle):
    x = np.array([np.cos(angle), 0.0, 0.0, np.sin(angle)])
    assert np.allclose(chart.foot(chart.psi(r, x)), x, atol=1e-9)


@pytest.mark.parametrize("p", [[1.02, 0.1, -0.05, 0.0], [0.0, 0.6, 0.8 + 3e-7, 0.0]])
def test_foot_jacobian_matches_differences(chart, p):
    p = np.array(p)
    _, D = chart.foot_with_jacobian(p)
    h = 1e-6
    fd = np.column_stack([(chart.foot(p + h * e) - chart.foot(p - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.max(np.abs(D - fd)) < 1e-7


def test_extended_form_at_quarter_width(sphere, chart):
    sys_, st_ = sphere
    moll = Mollifiers(EPS)
    x = np.array([0.0, 0.6, 0.8, 0.0])
    p = chart.psi(EPS / 4, x)
    w = np.array([0.3, -0.2, 0.5, 0.1])
    h = 1e-6
    dfoot_w = (chart.foot(p + h * w) - chart.foot(p - h * w)) / (2 * h)
    want = (1 + EPS / 4) * (liouville_form(sys_, st_, x, 0.0) @ dfoot_w)
    assert extended_one_form(chart, moll, sys_, st_, p) @ w == pytest.approx(want, abs=1e-6)
    assert np.all(extended_one_form(chart, moll, sys_, st_, chart.psi(0.095, x)) == 0.0)


def test_extended_form_restricts_to_lambda_on_the_surface(sphere, chart):
    sys_, st_ = sphere
    x = np.array([0.6, 0.0, 0.0, 0.8])
    lam = extended_one_form(chart, Mollifiers(EPS), sys_, st_, x)
    assert np.allclose(lam, liouville_form(sys_, st_, x, 0.0), atol=1e-12)


def test_extended_hamiltonian(sphere, chart):
    sys_, _ = sphere
    moll = Mollifiers(EPS)
    x = np.array([1.0, 0, 0, 0])
    assert extended_hamiltonian(chart, moll, sys_, chart.psi(EPS / 6, x)) == pytest.approx(EPS / 6, abs=1e-10)
    assert extended_hamiltonian(chart, moll, sys_, 3 * x) == pytest.approx(EPS / 3)
    assert extended_hamiltonian(chart, moll, sys_, 0.2 * x) == pytest.approx(-EPS / 3)


def test_separation_error_at_critical_point_on_level():
    sys_ = HamiltonianHomotopy("q1^2 - p1^2", 1, X=["0.5*q1", "0.5*p1"])
    st_ = SymplecticStructure(1)
    chart = TubularChart(sys_, st_, 0.0, 0.1)
    with pytest.raises(SeparationError):
        extended_hamiltonian(chart, Mollifiers(0.1), sys_, np.zeros(2))


def test_action_equals_period(sphere, chart, reeb_orbit):
    sys_, st_ = sphere
    moll = Mollifiers(EPS)
    A = rabinowitz_action(reeb_orbit, chart, moll, sys_, st_)
    assert abs(A - reeb_orbit.tau) <= 1e-6 * (1 + reeb_orbit.tau)
    assert reeb_orbit.tau == pytest.approx(np.pi, abs=1e-9)
    back = replace(reeb_orbit, samples=reeb_orbit.samples[::-1].copy())
    assert rabinowitz_action(back, chart, moll, sys_, st_) == pytest.approx(-reeb_orbit.tau, abs=1e-6)


def test_constant_loop_outside_the_chart(sphere, chart):
    sys_, st_ = sphere
    loop = ParametrisedOrbit(0.0, 2.0, np.tile([2.0, 0, 0, 0], (32, 1)), "reeb")
    assert rabinowitz_action(loop, chart, Mollifiers(EPS), sys_, st_) == pytest.approx(-2.0 * EPS / 3)


def test_orbit_is_critical_and_perturbation_is_not(sphere, chart, reeb_orbit):
    sys_, st_ = sphere
    moll = Mollifiers(EPS)
    comps = criticality_components(reeb_orbit, chart, moll, sys_, st_)
    assert max(comps.values()) < 1e-6
    off = replace(reeb_orbit, tau=reeb_orbit.tau * 1.001)
    assert criticality_components(off, chart, moll, sys_, st_)["ode"] > 1e-3


def test_chart_too_wide_is_rejected(sphere):
    sys_, st_ = sphere
    with pytest.raises(ChartError):
        build_tubular(sys_, st_, 0.0, 0.6, np.array([[1.0, 0, 0, 0]]))


def test_default_epsilon_fits_inside_regular_region(sphere):
    sys_, st_ = sphere
    eps = default_epsilon(sys_, st_, 0.0, np.array([[1.0, 0, 0, 0]]))
    assert 0 < eps < 0.5 / 4 + 1e-12
    build_tubular(sys_, st_, 0.0, eps, np.array([[1.0, 0, 0, 0]]))


def test_kappa_for_sphere_and_contact_examples(sphere):
    b = estimate_kappa(*sphere, [0.0], 0.1, sample_count=6)
    assert b.kappa == pytest.approx(2.5, rel=1e-6)
    assert b.f_min == pytest.approx(0.5) and b.f_max == pytest.approx(0.5)
    # sigma-independent contact case: f = 1 and nothing moves with sigma
    fixed = HamiltonianHomotopy("0.5*(q1^2 + q2^2 + p1^2 + p2^2) - 0.5", 2, X=["q1", "q2", "p1", "p2"])
    c = estimate_kappa(fixed, SymplecticStructure(2), [0.0, 0.5], 0.1, sample_count=4)
    assert c.kappa == pytest.approx(1.25, rel=1e-6)


def test_stability_bounds_validation():
    with pytest.raises(ValueError):
        StabilityBounds(0.5, 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        StabilityBounds(2.0, 0.1, 1.0, 1)


def test_certificate_passes_and_fails():
    flat = synthetic_cylinder(np.linspace(0, 0.9, 10), lambda s: 3.0)
    assert period_bound_certificate(flat, 1.25).passed
    blow = synthetic_cylinder(np.linspace(0, 0.99, 60), lambda s: 2 * np.pi / (1 - s))
    cert = period_bound_certificate(blow, 2.0)
    assert not cert.passed and min(cert.margins) < 0


# mollifiers


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(-1.0, 1.0))
def test_mollifier_shapes(eps, u):
    m = Mollifiers(eps)
    r = u * eps
    if abs(r) <= eps / 2:
        assert m.f(r) == pytest.approx(r + 1, abs=1e-14)
    if abs(r) >= 0.9 * eps:
        assert m.f(r) == 0.0
    if abs(r) <= eps / 4:
        assert m.h(r) == pytest.approx(r, abs=1e-14)
    if abs(r) >= 5 * eps / 12:
        assert m.h(r) == pytest.approx(np.sign(r) * eps / 3, abs=1e-12)
    assert -1e-14 <= m.dh(r) <= 1 + 1e-14


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_clamp_is_monotone(a, b):
    c = SmoothClamp(-1.0, 1.0, 0.5, 0.5)
    lo, hi = sorted((a, b))
    assert c(lo) <= c(hi) + 1e-15


def test_clamp_derivatives_match_differences():
    c = SmoothClamp(-1.0, 1.0, 0.5, 0.5)
    y = np.linspace(-2, 2, 41) + 0.013
    v, d1, d2 = c.derivatives(y)
    h = 1e-6
    assert np.allclose(d1, (c(y + h) - c(y - h)) / (2 * h), atol=1e-7)
    assert np.allclose(d2, (c.derivatives(y + h)[1] - c.derivatives(y - h)[1]) / (2 * h), atol=1e-5)


def test_smooth_step_limits():
    assert smooth_step(0.0) == 0.0 and smooth_step(1.0) == 1.0
    assert smooth_step(0.5) == pytest.approx(0.5)
