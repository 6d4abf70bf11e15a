"""Adaptive Dormand-Prince 5(4) integration with dense output.

The variational equations ``M' = J(x(t)) M`` are integrated together with
the state, using exact Jacobians of the vector field.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrationError

__all__ = ["Trajectory", "integrate", "flow_with_variational", "stormer_verlet"]

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A = [np.array(row) for row in _A]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_MAX_STEPS = 200_000


@dataclass
class Trajectory:
    """Accepted steps of an integration, with cubic Hermite dense output."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    energy_drift: float = 0.0
    nfev: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.states):
            raise ValueError("trajectory needs at least two matching times and states")

    @property
    def final(self):
        return self.states[-1]

    def __call__(self, t):
        """State at time(s) ``t`` by cubic Hermite interpolation."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        ts = self.times
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        t0, t1 = ts[idx], ts[idx + 1]
        h = (t1 - t0)[:, None]
        s = ((t - t0) / (t1 - t0))[:, None]
        y0, y1 = self.states[idx], self.states[idx + 1]
        d0, d1 = self.derivs[idx], self.derivs[idx + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        return out[0] if scalar else out


def _initial_step(rhs, y0, f0, tol, span, sl):
    scale = tol + tol * np.abs(y0[sl])
    size = np.sqrt(scale.size)
    d0 = np.linalg.norm(y0[sl] / scale) / size
    d1 = np.linalg.norm(f0[sl] / scale) / size
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(h0, y0 + h0 * f0)
    d2 = np.linalg.norm((f1 - f0)[sl] / scale) / size / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def _dopri(rhs, y0, T, tol, control=None, max_step=np.inf, energy=None):
    """Core loop; ``control`` restricts error control to a leading slice."""
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state")
    T = float(T)
    if T < 0:
        raise ValueError("integration time must be nonnegative")
    sl = slice(None) if control is None else slice(0, control)
    t = 0.0
    f = rhs(t, y)
    nfev = 1
    times, states, derivs = [t], [y.copy()], [f.copy()]
    if T == 0.0:
        return Trajectory(np.array([0.0, 0.0]), np.array([y, y]), np.array([f, f]), 0.0, nfev)
    h = min(_initial_step(rhs, y, f, tol, T, sl), max_step)
    nfev += 1
    e0 = energy(y[:control] if control else y) if energy is not None else None
    drift = 0.0
    k = np.empty((7, y.size))
    hmin = 1e-14 * max(1.0, T)
    steps = 0
    while t < T:
        if steps > _MAX_STEPS:
            raise IntegrationError("maximum number of steps exceeded")
        h = min(h, T - t)
        if T - t - h < 1e-12 * T:
            h = T - t
        k[0] = f
        # overflow in a trial stage is caught by the finiteness test below
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(1, 7):
                yi = y + h * (_A[i] @ k[:i])
                k[i] = rhs(t + _C[i] * h, yi)
            y_new = y + h * (_B5 @ k)
            err_vec = h * (_E @ k)
        nfev += 6
        if not np.all(np.isfinite(y_new)):
            h *= 0.25
            if h < hmin:
                raise IntegrationError("non-finite state")
            continue
        scale = tol + tol * np.maximum(np.abs(y[sl]), np.abs(y_new[sl]))
        err = np.max(np.abs(err_vec[sl]) / scale)
        if err <= 1.0:
            t = T if h == T - t else t + h
            y = y_new
            f = k[6]
            times.append(t)
            states.append(y.copy())
            derivs.append(f.copy())
            if energy is not None:
                drift = max(drift, abs(energy(y[:control] if control else y) - e0))
            factor = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
            h = min(h * factor, max_step)
            steps += 1
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
            if h < hmin:
                raise IntegrationError(f"step size underflow at t={t:.6g}")
    return Trajectory(np.array(times), np.array(states), np.array(derivs), drift, nfev)


def integrate(vf, x0, T, tol=1e-10, energy=None, max_step=np.inf):
    """Integrate ``x' = vf(x)`` from ``x0`` over ``[0, T]``.

    ``vf`` maps a state to its velocity.  ``energy`` (optional) is evaluated on
    accepted states to record the drift.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(x0, dtype=float)
    return _dopri(lambda t, y: np.asarray(vf(y), dtype=float), x0, T, tol,
                  energy=energy, max_step=max_step)


def flow_with_variational(vf_jac, x0, T, tol=1e-10, control_matrix=True, return_trajectory=False):
    """``(phi_T(x0), D phi_T(x0))`` from the augmented system ``[f(x); J(x) M]``.

    ``vf_jac(x)`` returns ``(f(x), J(x))``.  With ``control_matrix`` the step
    size also controls the error of ``M``.
    """
    x0 = np.asarray(x0, dtype=float)
    m = x0.size
    if float(T) == 0.0:
        out = (x0.copy(), np.eye(m))
        return out + (None,) if return_trajectory else out

    def rhs(t, y):
        v, J = vf_jac(y[:m])
        return np.concatenate([v, (J @ y[m:].reshape(m, m)).ravel()])

    y0 = np.concatenate([x0, np.eye(m).ravel()])
    traj = _dopri(rhs, y0, T, tol, control=None if control_matrix else m)
    yT = traj.final
    out = (yT[:m].copy(), yT[m:].reshape(m, m).copy())
    if return_trajectory:
        small = Trajectory(traj.times, traj.states[:, :m], traj.derivs[:, :m], nfev=traj.nfev)
        return out + (small,)
    return out


def stormer_verlet(grad_q, grad_p, x0, T, steps):
    """Fixed-step Stormer-Verlet for separable ``H = K(p) + V(q)``.

    ``grad_q(q)`` and ``grad_p(p)`` are the partial gradients.  Returns a
    :class:`Trajectory` (derivatives are the vector field at each node).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size // 2
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = float(T) / steps
    q, p = x0[:n].copy(), x0[n:].copy()
    states = [x0.copy()]
    derivs = [np.concatenate([grad_p(p), -grad_q(q)])]
    for _ in range(steps):
        p_half = p - 0.5 * h * grad_q(q)
        q = q + h * grad_p(p_half)
        p = p_half - 0.5 * h * grad_q(q)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise IntegrationError("non-finite state")
        states.append(np.concatenate([q, p]))
        derivs.append(np.concatenate([grad_p(p), -grad_q(q)]))
    return Trajectory(np.linspace(0.0, T, steps + 1), np.array(states), np.array(derivs))
