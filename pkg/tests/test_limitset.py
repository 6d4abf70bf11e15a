import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlimit.continuation import envelope_check, synthetic_cylinder
from orbitlimit.errors import LimitSetError
from orbitlimit.limitset import cluster_candidates, extract_limit_set, loop_distance
from orbitlimit.orbit import ParametrisedOrbit, shift_loop

TWO_PI = 2 * np.pi


def circle(r, tau=TWO_PI, N=64, sigma=0.0, center=(0.0, 0.0)):
    t = np.arange(N) / N
    s = np.column_stack([center[0] + r * np.cos(TWO_PI * t), center[1] - r * np.sin(TWO_PI * t)])
    return ParametrisedOrbit(sigma, tau, s, "reeb", tau)


def aniso_analytic(sigma, N):
    r = np.sqrt(1 + 2 * sigma)
    t = np.arange(N) / N
    z = np.zeros(N)
    s = np.column_stack([r * np.cos(TWO_PI * t), z, -r * np.sin(TWO_PI * t), z])
    return ParametrisedOrbit(sigma, TWO_PI, s, "reeb", TWO_PI)


def test_distance_of_identical_loops_is_zero():
    a = circle(1.0)
    assert loop_distance(a, a) == 0.0


def test_distance_ignores_phase_shift():
    a = circle(1.0)
    b = shift_loop(a, 0.3171)
    assert loop_distance(a, b) < 1e-9


def test_distance_of_concentric_circles():
    a, b = circle(1.0), circle(1.2, tau=7.0)
    # C0 part 0.2, derivative part 2 pi * 0.2, plus the period gap
    want = 0.2 + TWO_PI * 0.2 + abs(7.0 - TWO_PI)
    assert loop_distance(a, b) == pytest.approx(want, rel=1e-9)
    assert loop_distance(a, b, derivative=False) == pytest.approx(0.2 + abs(7.0 - TWO_PI), rel=1e-9)


def test_distance_requires_equal_sampling():
    with pytest.raises(ValueError):
        loop_distance(circle(1.0, N=32), circle(1.0, N=64))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 2), st.floats(0.5, 2), st.floats(0.5, 2), st.floats(0, 1), st.floats(0, 1))
def test_distance_is_symmetric_and_satisfies_triangle_inequality(r1, r2, r3, s2, s3):
    # the sup runs over the sample points of the first loop, so both properties
    # hold up to the discretisation error of order N^-2
    tol = 2e-3
    a = circle(r1)
    b = shift_loop(circle(r2, center=(0.1, 0.0)), s2)
    c = shift_loop(circle(r3, tau=6.0), s3)
    ab, ba = loop_distance(a, b), loop_distance(b, a)
    assert ab == pytest.approx(ba, abs=tol)
    assert loop_distance(a, c) <= ab + loop_distance(b, c) + tol


def test_removable_end_recovers_analytic_orbit(aniso_cylinder, anisotropic):
    sys_, st_ = anisotropic
    rep = extract_limit_set(aniso_cylinder, tail_fraction=0.4, system=sys_, structure=st_,
                            sigma_infinity=1.0)
    assert rep.nonempty and rep.connected and rep.cauchy
    limit = rep.candidates[0]
    assert loop_distance(limit, aniso_analytic(1.0, limit.N)) <= 1e-4
    assert "corrector-failed" not in limit.flags


def test_extrapolation_without_system_is_first_order_close(aniso_cylinder):
    rep = extract_limit_set(aniso_cylinder, tail_fraction=0.4, sigma_infinity=1.0)
    assert rep.nonempty
    assert loop_distance(rep.candidates[0], aniso_analytic(1.0, 256)) < 0.1


def test_blow_up_has_no_limit_and_fails_envelope():
    cyl = synthetic_cylinder(np.linspace(0, 0.99, 60), lambda s: TWO_PI / (1 - s), radius_fn=lambda s: 1 / (1 - s))
    rep = extract_limit_set(cyl)
    assert not rep.nonempty and not rep.cauchy
    assert rep.cauchy_defect > 1.0
    assert not envelope_check(cyl, 2.0).passed


def test_constant_family_has_a_single_limit():
    cyl = synthetic_cylinder(np.linspace(0, 0.9, 10), lambda s: 3.0)
    rep = extract_limit_set(cyl, sigma_infinity=1.0)
    assert rep.nonempty and rep.connected
    assert rep.candidates[0].tau == pytest.approx(3.0)
    rec = rep.to_record(include_samples=False)
    assert rec["nonempty"] and rec["clusters"] == [[0]]
    assert rep.distances_csv().startswith("sigma,distance_to_limit\n")


def test_clusters_split_distinct_loops():
    loops = [circle(1.0), shift_loop(circle(1.0), 0.2), circle(2.0)]
    groups, D = cluster_candidates(loops, 1e-6)
    assert groups == [[0, 1], [2]]
    assert D.shape == (3, 3)


def test_empty_cylinder_is_an_error():
    from orbitlimit.continuation import OrbitCylinder

    with pytest.raises(LimitSetError):
        extract_limit_set(OrbitCylinder([], 0.0, 0.0))
