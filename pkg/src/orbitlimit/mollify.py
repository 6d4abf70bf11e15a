"""Smooth cut-offs built from the ``exp(-1/t)`` glue.

``smooth_step`` rises from 0 to 1 on ``[0, 1]`` and is C-infinity.  The
clamps integrate ``1 - smooth_step`` so that they are exactly the identity on
a core interval and exactly constant beyond a transition layer.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = ["smooth_step", "smooth_step_derivatives", "SmoothClamp", "Mollifiers"]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _phi(t):
    return 1.0 / t - 1.0 / (1.0 - t)


def smooth_step(t):
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0 - 2e-3, 1.0, 0.0)
    inside = (t > 2e-3) & (t < 1.0 - 2e-3)
    if np.any(inside):
        ti = t[inside]
        out = out.astype(float)
        out[inside] = expit(-_phi(ti))
    return out if out.ndim else float(out)


def smooth_step_derivatives(t):
    """``(s, s', s'')`` of the smooth step at ``t`` (vectorised)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.where(t >= 1.0, 1.0, 0.0)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)
    # outside this window s is 0 or 1 to double precision
    inside = (t > 2e-3) & (t < 1.0 - 2e-3)
    s[(t > 0.0) & (t <= 2e-3)] = 0.0
    s[(t >= 1.0 - 2e-3) & (t < 1.0)] = 1.0
    ti = t[inside]
    if ti.size:
        si = expit(-_phi(ti))
        p1 = -1.0 / ti**2 - 1.0 / (1.0 - ti) ** 2
        p2 = 2.0 / ti**3 - 2.0 / (1.0 - ti) ** 3
        g = si * (1.0 - si)
        s[inside] = si
        d1[inside] = -g * p1
        d2[inside] = -(d1[inside] * (1.0 - 2.0 * si) * p1 + g * p2)
    return s, d1, d2


def _step_integral(t):
    """``int_0^t smooth_step`` for ``t`` in ``[0, 1]`` (Gauss-Legendre)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    u = 0.5 * t[:, None] * (_GL_NODES[None, :] + 1.0)
    return 0.5 * t * (smooth_step(u) @ _GL_WEIGHTS)


@dataclass(frozen=True)
class SmoothClamp:
    """Monotone C-infinity clamp.

    Identity on ``[lo, hi]``; constant ``hi + upper_width / 2`` above
    ``hi + upper_width`` and ``lo - lower_width / 2`` below ``lo - lower_width``.
    """

    lo: float
    hi: float
    lower_width: float
    upper_width: float

    @property
    def ceiling(self):
        return self.hi + 0.5 * self.upper_width

    @property
    def floor(self):
        return self.lo - 0.5 * self.lower_width

    def __call__(self, y):
        return self.derivatives(y)[0]

    def derivatives(self, y):
        """Value, first and second derivative (vectorised)."""
        scalar = np.ndim(y) == 0
        y = np.atleast_1d(np.asarray(y, dtype=float))
        val = y.copy()
        d1 = np.ones_like(y)
        d2 = np.zeros_like(y)
        for side in (1, -1):
            if side == 1:
                edge, w = self.hi, self.upper_width
                tau = (y - edge) / w
            else:
                edge, w = self.lo, self.lower_width
                tau = (edge - y) / w
            mask = tau > 0
            if not np.any(mask):
                continue
            tc = np.minimum(tau[mask], 1.0)
            s, s1, _ = smooth_step_derivatives(tc)
            integral = tc - _step_integral(tc)
            val[mask] = edge + side * w * integral
            d1[mask] = 1.0 - s
            d2[mask] = -side * s1 / w
        if scalar:
            return float(val[0]), float(d1[0]), float(d2[0])
        return val, d1, d2


@dataclass(frozen=True)
class Mollifiers:
    """Cut-off ``f`` and saturation ``h`` for a tubular width ``epsilon``.

    * ``f(r) = r + 1`` on ``[-eps/2, eps/2]``, support in ``[-0.9 eps, 0.9 eps]``.
    * ``h(r) = r`` on ``[-eps/4, eps/4]``, ``h = +-eps/3`` for ``|r| >= 5 eps/12``,
      nondecreasing.

    ``h`` cannot be both smooth and linear all the way to ``eps/3`` while being
    constant from there on, so the linear core stops at ``eps/4`` and the
    transition layer is sized to land exactly on the ``eps/3`` plateau.
    """

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def h_clamp(self):
        e = self.epsilon
        return SmoothClamp(-e / 4, e / 4, e / 6, e / 6)

    def f(self, r):
        e = self.epsilon
        r = np.asarray(r, dtype=float)
        chi = 1.0 - smooth_step((np.abs(r) - 0.5 * e) / (0.4 * e))
        out = (r + 1.0) * chi
        return out if np.ndim(out) else float(out)

    def h(self, r):
        return self.h_clamp(r)

    def dh(self, r):
        return self.h_clamp.derivatives(r)[1]
