"""Tubular charts, extended forms and the Rabinowitz action functional.

Near the energy surface we use coordinates ``(r, x)`` where ``x`` lies on the
surface and ``p = psi(r, x)`` is the time-``r`` flow of ``Y = X / dH(X)``
from ``x``.  Since ``dH(Y) = 1`` the transverse coordinate of ``p`` is simply
``r = H(p)`` and the foot point is ``x = phi^Y_{-r}(p)``.

The extended one-form is ``lambda_bar(p) = f(r) * foot^* lambda`` and the
extended Hamiltonian is ``H_bar(p) = h(r)``, with ``f`` and ``h`` the
cut-offs of :class:`~orbitlimit.mollify.Mollifiers`.  On the surface the
Hamiltonian field of ``H_bar`` with respect to ``d lambda_bar`` is the Reeb
field, so Reeb orbits are critical points of

    A(gamma, tau) = int_0^1 lambda_bar(gamma') dt - tau int_0^1 H_bar(gamma) dt

with critical value ``tau``.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (ChartError, IntegrationError, LevelSetError, SeparationError,
                     StabilityViolation)
from .flow import flow_with_variational, integrate
from .mollify import Mollifiers
from .orbit import spectral_derivative
from .symplectic import (f_sigma, level_tolerance, liouville_form, reeb_field,
                         sample_level_set, stability_residual)

__all__ = [
    "Mollifiers", "TubularChart", "build_tubular", "extended_one_form", "extended_hamiltonian",
    "rabinowitz_action", "criticality_residual", "criticality_components", "StabilityBounds",
    "estimate_kappa", "PeriodCertificate", "period_bound_certificate", "default_epsilon",
]

TAYLOR_RADIUS = 1e-6


def _transverse_field(system, sigma):
    """``x -> (Y, DY)`` for ``Y = X / dH(X)``."""

    def field(x):
        _, g, hess = system.jet(x, sigma)
        X, DX = system.stabilizer_jacobian(x, sigma)
        f = float(g @ X)
        if not f > 0:
            raise ChartError(f"dH(X) = {f:.3e} is not positive: outside the regular neighbourhood")
        grad_f = hess @ X + DX.T @ g
        return X / f, DX / f - np.outer(X, grad_f) / f**2

    return field


@dataclass
class TubularChart:
    """Flow-box coordinates around the level set ``H_sigma = 0``."""

    system: object
    structure: object
    sigma: float
    epsilon: float
    tol: float = 1e-12
    _field: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self._field = _transverse_field(self.system, self.sigma)

    def Y(self, x):
        return self._field(np.asarray(x, dtype=float))[0]

    def r(self, p):
        """Transverse coordinate of ``p``."""
        return self.system.value(p, self.sigma)

    def psi(self, r, x):
        """Time-``r`` flow of ``Y`` from ``x``."""
        x = np.asarray(x, dtype=float)
        if r == 0:
            return x.copy()
        s = 1.0 if r > 0 else -1.0
        try:
            return integrate(lambda y: s * self.Y(y), x, abs(r), self.tol).final
        except IntegrationError as exc:
            raise ChartError(f"chart flow failed: {exc}") from exc

    def foot(self, p):
        return self.foot_with_jacobian(p)[0]

    def foot_with_jacobian(self, p):
        """Foot point ``x`` on the surface and the derivative of ``p -> x``."""
        p = np.asarray(p, dtype=float)
        r, g = self.system.gradient(p, self.sigma)
        if abs(r) <= TAYLOR_RADIUS:
            Y, DY = self._field(p)
            x = p - r * Y + 0.5 * r * r * (DY @ Y)
            D = np.eye(p.size) - r * DY - np.outer(Y - r * (DY @ Y), g)
            return x, D
        s = -1.0 if r > 0 else 1.0

        def vf_jac(y):
            Y, DY = self._field(y)
            return s * Y, s * DY

        try:
            x, M = flow_with_variational(vf_jac, p, abs(r), self.tol)
        except IntegrationError as exc:
            raise ChartError(f"chart flow failed: {exc}") from exc
        return x, M - np.outer(self.Y(x), g)


def build_tubular(system, structure, sigma, epsilon, samples, stability_tol=1e-6, check_count=8):
    """Chart of width ``epsilon``; verifies regularity of the flow on samples.

    Raises ChartError when the transverse flow from a sample leaves the
    region where ``dH(X) > 0`` within ``|r| < epsilon``.
    """
    chart = TubularChart(system, structure, float(sigma), float(epsilon))
    samples = np.atleast_2d(samples)
    for i, x in enumerate(samples):
        if abs(system.value(x, sigma)) > level_tolerance(x):
            raise LevelSetError(f"sample {i} is not on the level set")
        if i < check_count:
            res = stability_residual(system, structure, x, sigma)
            if res > stability_tol:
                raise StabilityViolation(f"stability residual {res:.3e} at sample {i}")
        for s in (1.0, -1.0):
            try:
                traj = integrate(lambda y: s * chart.Y(y), x, epsilon, 1e-9)
            except (IntegrationError, ChartError) as exc:
                raise ChartError(f"epsilon={epsilon:g} exceeds the regular neighbourhood: {exc}") from exc
            for y in traj.states:
                chart.Y(y)
    return chart


def extended_one_form(chart, moll, system, structure, p, sigma=None):
    """Covector ``lambda_bar(p)``; zero outside the support of ``f``."""
    sigma = chart.sigma if sigma is None else sigma
    p = np.asarray(getattr(p, "state", p), dtype=float)
    r = system.value(p, sigma)
    fr = moll.f(r)
    if fr == 0.0:
        return np.zeros(p.size)
    x, D = chart.foot_with_jacobian(p)
    lam = liouville_form(system, structure, x, sigma)
    return fr * (D.T @ lam)


def extended_hamiltonian(chart, moll, system, p, sigma=None, grad_tol=1e-10):
    """``H_bar(p) = h(H(p))``: ``h(r)`` in the chart and ``+-eps/3`` beyond it."""
    sigma = chart.sigma if sigma is None else sigma
    p = np.asarray(getattr(p, "state", p), dtype=float)
    r, g = system.gradient(p, sigma)
    if abs(r) < moll.epsilon and np.linalg.norm(g) <= grad_tol:
        if abs(r) <= level_tolerance(p):
            raise SeparationError("cannot decide the side of the level set at a critical point")
        # outside the chart: only the sign of H matters
        return float(np.sign(r) * moll.epsilon / 3.0)
    return float(moll.h(r))


def _action_parts(samples, tau, chart, moll, system, structure, sigma):
    d = spectral_derivative(samples)
    lam = np.array([extended_one_form(chart, moll, system, structure, x, sigma) @ v
                    for x, v in zip(samples, d)])
    hb = np.array([extended_hamiltonian(chart, moll, system, x, sigma) for x in samples])
    return float(np.mean(lam)), float(np.mean(hb))


def rabinowitz_action(orbit, chart, moll, system, structure, samples=None, tau=None):
    """Trapezoid quadrature of the action over the sampled loop.

    ``samples``/``tau`` override those of ``orbit`` (for variations).
    """
    samples = orbit.samples if samples is None else samples
    tau = orbit.tau if tau is None else tau
    lam, hb = _action_parts(samples, tau, chart, moll, system, structure, orbit.sigma)
    return lam - tau * hb


def _probe(N, dim, rng, modes=3):
    t = np.arange(N) / N
    out = np.zeros((N, dim))
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(dim), rng.standard_normal(dim)
        out += np.outer(np.cos(2 * np.pi * k * t), a) + np.outer(np.sin(2 * np.pi * k * t), b)
    return out / np.max(np.abs(out))


def criticality_components(orbit, chart, moll, system, structure, probe_count=4, seed=0, step=1e-5):
    """The three criticality defects of ``(gamma, tau)``.

    ``ode``: ``max |gamma' - tau h'(r) R(gamma)|``; ``mean_hbar``:
    ``|int H_bar(gamma)|``; ``directional``: largest central difference of
    ``A`` along random low-mode loop variations and along ``tau``.
    """
    sigma = orbit.sigma
    s = orbit.samples
    d = spectral_derivative(s)
    ode = 0.0
    for x, v in zip(s, d):
        r = system.value(x, sigma)
        R = reeb_field(system, structure, x, sigma, check_level=False)
        ode = max(ode, float(np.max(np.abs(v - orbit.tau * moll.dh(r) * R))))
    _, hb = _action_parts(s, orbit.tau, chart, moll, system, structure, sigma)
    rng = np.random.default_rng(seed)
    dirs = []
    for _ in range(probe_count):
        xi = _probe(orbit.N, s.shape[1], rng)
        plus = rabinowitz_action(orbit, chart, moll, system, structure, s + step * xi)
        minus = rabinowitz_action(orbit, chart, moll, system, structure, s - step * xi)
        dirs.append(abs(plus - minus) / (2 * step))
    plus = rabinowitz_action(orbit, chart, moll, system, structure, tau=orbit.tau + step)
    minus = rabinowitz_action(orbit, chart, moll, system, structure, tau=orbit.tau - step)
    dirs.append(abs(plus - minus) / (2 * step))
    return {"ode": ode, "mean_hbar": abs(hb), "directional": max(dirs)}


def criticality_residual(orbit, chart, moll, system, structure, probe_count=4, seed=0):
    comps = criticality_components(orbit, chart, moll, system, structure, probe_count, seed)
    return max(comps.values())


# --------------------------------------------------------------------------
# Step-2 certificates


@dataclass
class StabilityBounds:
    kappa: float
    f_min: float
    f_max: float
    sample_count: int
    dlambda_max: float = 0.0
    dhbar_max: float = 0.0
    safety: float = 1.25
    per_sigma: list = field(default_factory=list)

    def __post_init__(self):
        if not self.kappa >= 1:
            raise ValueError("kappa must be >= 1")
        if not (1.0 / self.kappa <= self.f_min <= self.f_max <= self.kappa):
            raise ValueError("kappa must dominate the sampled f range")

    def to_record(self):
        return {"kappa": self.kappa, "f_min": self.f_min, "f_max": self.f_max,
                "sample_count": self.sample_count, "dlambda_max": self.dlambda_max,
                "dhbar_max": self.dhbar_max, "safety": self.safety}


def estimate_kappa(system, structure, sigma_grid, epsilon, samples=None, sample_count=16,
                   seed=0, safety=1.25, sample_scale=1.0):
    """Smallest ``kappa >= 1`` dominating ``f``, ``1/f`` and twice the sigma-derivatives
    of ``lambda_bar(R)`` and ``H_bar``, inflated by ``safety``.

    ``samples`` maps each grid sigma to points of its level set; missing
    entries are drawn with :func:`~orbitlimit.symplectic.sample_level_set`.
    Sigma-derivatives are central differences at fixed ambient points with
    step ``1e-4`` times the grid span.
    """
    grid = np.atleast_1d(np.asarray(sigma_grid, dtype=float))
    span = float(grid.max() - grid.min()) if grid.size > 1 else 1.0
    delta = 1e-4 * (span if span > 0 else 1.0)
    moll = Mollifiers(epsilon)
    f_lo, f_hi, dl_max, dh_max, count = np.inf, 0.0, 0.0, 0.0, 0
    per_sigma = []
    for k, sigma in enumerate(grid):
        pts = None if samples is None else samples.get(float(sigma)) if isinstance(samples, dict) else samples
        if pts is None:
            pts = sample_level_set(system, sigma, sample_count, seed=seed + k, scale=sample_scale)
        charts = {s: TubularChart(system, structure, s, epsilon) for s in (sigma - delta, sigma + delta)}
        row = {"sigma": float(sigma), "f_min": np.inf, "f_max": 0.0, "dlambda": 0.0, "dhbar": 0.0}
        for x in np.atleast_2d(pts):
            f = f_sigma(system, structure, x, sigma)
            R = reeb_field(system, structure, x, sigma)
            lam = [extended_one_form(charts[s], moll, system, structure, x, s) @ R
                   for s in (sigma - delta, sigma + delta)]
            hb = [extended_hamiltonian(charts[s], moll, system, x, s) for s in (sigma - delta, sigma + delta)]
            dl = abs(lam[1] - lam[0]) / (2 * delta)
            dh = abs(hb[1] - hb[0]) / (2 * delta)
            if not (np.isfinite(dl) and np.isfinite(dh)):
                raise ChartError("non-finite sigma-derivative: the chart family is not smooth")
            row["f_min"] = min(row["f_min"], f)
            row["f_max"] = max(row["f_max"], f)
            row["dlambda"] = max(row["dlambda"], dl)
            row["dhbar"] = max(row["dhbar"], dh)
            count += 1
        f_lo, f_hi = min(f_lo, row["f_min"]), max(f_hi, row["f_max"])
        dl_max, dh_max = max(dl_max, row["dlambda"]), max(dh_max, row["dhbar"])
        per_sigma.append(row)
    kappa = safety * max(1.0, f_hi, 1.0 / f_lo, 2.0 * dl_max, 2.0 * dh_max)
    return StabilityBounds(float(kappa), float(f_lo), float(f_hi), count, float(dl_max),
                           float(dh_max), safety, per_sigma)


@dataclass
class PeriodCertificate:
    passed: bool
    kappa: float
    C: float
    C_lower: float
    f_min: float
    f_max: float
    margins: list

    def to_record(self):
        return {"kappa": self.kappa, "f_min": self.f_min, "f_max": self.f_max, "C": self.C,
                "lower_bound": 1.0 / self.C_lower, "pass": bool(self.passed),
                "margins": [float(m) for m in self.margins]}

    def to_json(self):
        return json.dumps(self.to_record(), sort_keys=True)


def period_bound_certificate(cyl, bounds):
    """Check ``1/C' <= tau_sigma <= C`` with ``C = tau_0 exp(kappa * span)``.

    ``C' = max(C, exp(kappa * span) / tau_0)`` gives the lower bound that the
    envelope implies when ``tau_0 < 1``.  Margins are ``min(C/tau - 1, tau C' - 1)``.
    """
    if cyl.normalization != "reeb":
        raise ValueError("the period certificate applies to Reeb-normalized cylinders")
    kappa = bounds.kappa if hasattr(bounds, "kappa") else float(bounds)
    taus = cyl.taus
    span = float(cyl.sigmas[-1] - cyl.sigmas[0])
    tau0 = float(taus[0])
    with np.errstate(over="ignore"):
        C = tau0 * np.exp(kappa * span)
        Cl = max(C, np.exp(kappa * span) / tau0)
    margins = [float(min(C / t - 1.0, t * Cl - 1.0)) for t in taus]
    passed = all(m >= -1e-12 for m in margins)
    return PeriodCertificate(passed, float(kappa), float(C), float(Cl),
                             float(getattr(bounds, "f_min", np.nan)),
                             float(getattr(bounds, "f_max", np.nan)), margins)


def default_epsilon(system, structure, sigma, samples, r_max=1.0, steps=32):
    """A quarter of the smallest transverse distance from the level set to
    where the chart flow degenerates, capped at ``r_max / 4``.
    """
    chart = TubularChart(system, structure, float(sigma), 1.0)
    best = r_max
    dr = r_max / steps
    for x in np.atleast_2d(samples):
        for s in (1.0, -1.0):
            y = np.asarray(x, dtype=float)
            reach = 0.0
            while reach < best:
                try:
                    y = integrate(lambda z: s * chart.Y(z), y, dr, 1e-9).final
                    chart.Y(y)
                except (ChartError, IntegrationError):
                    break
                reach += dr
            best = min(best, reach)
    if best <= 0:
        raise ChartError("no regular neighbourhood found around the samples")
    return best / 4.0
