import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitlimit.mane import ManeProblem, _Objective, detect_unbounded, fourier_modes, mane_estimate


def socp_oracle(prob, degree, grid):
    """Exact grid minimax over the same trigonometric family, solved as an SOCP."""
    obj = _Objective(prob, degree, grid)
    L = np.linalg.cholesky(prob.metric_inv)
    theta, t = cp.Variable(obj.size), cp.Variable()
    cons = []
    for k in range(obj.D.shape[0]):
        beta = obj.beta0[k] + obj.D[k] @ theta
        cons.append(0.5 * cp.sum_squares(L.T @ beta) + obj.V[k] <= t)
    cp.Problem(cp.Minimize(t), cons).solve(solver=cp.CLARABEL)
    return float(obj.exact(theta.value))


def test_zero_field_gives_max_potential():
    prob = ManeProblem(2, V="cos(q1) + 0.5*cos(q2)")
    res = mane_estimate(prob, degree=2, grid=32, restarts=3)
    assert abs(res.c - 1.5) <= 1e-6
    assert res.converged


def test_sin_primitive_matches_oracle_and_closed_form():
    prob = ManeProblem(2, beta0=["0", "sin(q1)"], alpha={(0, 1): "cos(q1)"})
    res = mane_estimate(prob, degree=2, grid=24, restarts=3)
    oracle = socp_oracle(prob, 2, 24)
    assert abs(res.c - oracle) <= 1e-3
    # the sin primitive cannot be gauged away below 1/2 = max |sin|^2 / 2
    assert abs(res.c - 0.5) <= 1e-3


def test_potential_plus_magnetic_against_oracle():
    prob = ManeProblem(2, V="0.3*cos(q1 + q2)", beta0=["0.2*cos(q2)", "sin(q1)"],
                       alpha={(0, 1): "cos(q1) + 0.2*sin(q2)"}, metric=[[2.0, 0.3], [0.3, 1.0]])
    res = mane_estimate(prob, degree=2, grid=20, restarts=3)
    assert abs(res.c - socp_oracle(prob, 2, 20)) <= 1e-3


def test_non_exact_field_is_unbounded_with_witness():
    prob = ManeProblem(2, B=-3.0)
    res = mane_estimate(prob)
    assert res.c == np.inf and res.to_record()["c"] == "inf"
    cert = res.certificate
    assert cert["B"] == -3.0 and cert["plane"] == [1, 2]
    for w in cert["witness"]:
        R = w["radius"]
        # Stokes: the flux through the disc bounds the circulation
        assert w["sup_beta_lower"] * w["circumference"] == pytest.approx(w["flux"])
        assert w["sup_beta_lower"] == pytest.approx(1.5 * R)
    energies = [w["energy_lower"] for w in cert["witness"]]
    assert energies == sorted(energies) and energies[-1] > 1e3


def test_detect_unbounded_rejects_exact_problem():
    with pytest.raises(ValueError):
        detect_unbounded(ManeProblem(2, V="cos(q1)"))


def test_primitive_check():
    with pytest.raises(ValueError):
        ManeProblem(2, beta0=["0", "sin(q1)"], alpha={(0, 1): "sin(q1)"})
    with pytest.raises(ValueError):
        ManeProblem(2, metric=[[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        ManeProblem(1, B=1.0)


@pytest.mark.parametrize("n, degree", [(1, 3), (2, 2), (3, 1)])
def test_mode_count(n, degree):
    modes = fourier_modes(n, degree)
    assert len(modes) == ((2 * degree + 1) ** n - 1) // 2
    assert len({tuple(m) for m in modes} | {tuple(-m) for m in modes}) == 2 * len(modes)


@settings(max_examples=8, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * np.pi))
def test_zero_field_value_is_grid_max_of_potential(a, b, shift):
    prob = ManeProblem(2, V=f"{a}*cos(q1) + {b}*sin(q2 + {shift})")
    res = mane_estimate(prob, degree=1, grid=12, restarts=1)
    vmax = float(np.max(prob.potential(prob.grid(12))))
    assert res.c == pytest.approx(vmax, abs=1e-6)
