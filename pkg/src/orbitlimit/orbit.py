"""Periodic orbits: shooting, re-timing, Floquet multipliers, resampling.

A loop is stored as ``N`` samples at uniform parameter ``t_i = i / N`` in
``[0, 1)`` together with its period ``tau``; the loop solves
``gamma'(t) = tau * V(gamma(t))`` where ``V`` is the Hamiltonian vector field
(``normalization="hamiltonian"``) or the Reeb field (``"reeb"``).
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize_scalar

from .errors import ConvergenceError, IntegrationError, ResidualError, StabilityViolation
from .flow import flow_with_variational, integrate
from .symplectic import HamiltonianField, f_sigma, level_tolerance

__all__ = [
    "ParametrisedOrbit", "FloquetData", "find_periodic", "reeb_normalize", "floquet",
    "loop_resample", "spectral_derivative", "orbit_residuals", "check_residuals",
    "sample_orbit", "loop_field", "orbit_to_record", "orbit_from_record",
]

TAU_MIN = 1e-6
TOL_FLOQUET = 1e-6
TOL_ODE = 1e-6
NEWTON_TOL = 1e-10


@dataclass(frozen=True)
class FloquetData:
    monodromy: np.ndarray
    multipliers: np.ndarray
    unit_count: int
    raw_eigenvalues: np.ndarray = None
    tol: float = TOL_FLOQUET

    @property
    def nondegenerate(self):
        return self.unit_count == 2


@dataclass(frozen=True)
class ParametrisedOrbit:
    sigma: float
    tau: float
    samples: np.ndarray
    normalization: str = "hamiltonian"
    tau_hamiltonian: float = None
    residuals: dict = field(default_factory=dict)
    floquet: FloquetData = None
    flags: tuple = ()

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("period must be positive")
        if self.normalization not in ("hamiltonian", "reeb"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] % 2:
            raise ValueError("samples must be an (N, 2n) array")
        object.__setattr__(self, "samples", s)
        if self.tau_hamiltonian is None and self.normalization == "hamiltonian":
            object.__setattr__(self, "tau_hamiltonian", float(self.tau))

    @property
    def n(self):
        return self.samples.shape[1] // 2

    @property
    def N(self):
        return self.samples.shape[0]

    @property
    def start(self):
        return self.samples[0]

    def derivative(self):
        """``d gamma / dt`` on the unit-parameter loop."""
        return spectral_derivative(self.samples)


def spectral_derivative(samples):
    """Derivative of a periodic sampled loop on ``[0, 1)`` via FFT."""
    s = np.asarray(samples, dtype=float)
    N = s.shape[0]
    k = np.fft.fftfreq(N, d=1.0 / N)
    if N % 2 == 0:
        k[N // 2] = 0.0
    coef = np.fft.fft(s, axis=0)
    return np.real(np.fft.ifft(2j * np.pi * k[:, None] * coef, axis=0))


def loop_field(system, structure, sigma, normalization):
    """Vector field ``V`` of the given normalization (no level-set check)."""
    F = HamiltonianField(system, structure, sigma)
    if normalization == "hamiltonian":
        return F

    def reeb(x):
        _, g = system.gradient(x, sigma)
        f = float(g @ system.stabilizer(x, sigma))
        if not f > 0:
            raise StabilityViolation(f"dH(X) = {f:.3e} is not positive at {x}")
        return F(x) / f

    return reeb


def sample_orbit(vf, x0, tau, N, tol=1e-12):
    """Samples at ``t_i = i/N`` by integrating segment by segment.

    Returns ``(samples, closure)`` with the closure defect ``|x(tau) - x0|``.
    """
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((N, x.size))
    dt = tau / N
    for i in range(N):
        out[i] = x
        x = integrate(vf, x, dt, tol).final
    return out, float(np.linalg.norm(x - out[0]))


def orbit_residuals(orbit, system, structure, closure=None):
    """``ode``, ``level`` and ``closure`` residuals of an orbit."""
    V = loop_field(system, structure, orbit.sigma, orbit.normalization)
    vel = np.array([V(x) for x in orbit.samples])
    ode = float(np.max(np.abs(orbit.derivative() - orbit.tau * vel)))
    level = float(np.max(np.abs(system.values(orbit.samples, orbit.sigma))))
    res = {"ode": ode, "level": level,
           "closure": float(orbit.residuals.get("closure", 0.0) if closure is None else closure)}
    return res


def check_residuals(orbit, tol_ode=TOL_ODE, tol_level=None):
    """Raise ResidualError when an orbit violates its residual bounds."""
    res = orbit.residuals
    if tol_level is None:
        tol_level = level_tolerance(orbit.samples[np.argmax(np.sum(orbit.samples**2, axis=1))])
    if res.get("level", 0.0) > tol_level:
        raise ResidualError(f"level residual {res['level']:.3e} exceeds {tol_level:.1e}")
    if res.get("ode", 0.0) > tol_ode:
        raise ResidualError(f"ODE residual {res['ode']:.3e} exceeds {tol_ode:.1e}")
    return True


# --------------------------------------------------------------------------
# shooting


def find_periodic(system, structure, seed, tau_guess, sigma, N=256, tol=NEWTON_TOL,
                  max_iter=25, integ_tol=1e-12, tau_min=TAU_MIN, compute_floquet=True,
                  grad_min=1e-4, floquet_tol=TOL_FLOQUET):
    """Newton shooting for a periodic orbit of ``X_{H_sigma}``.

    Unknowns ``(x, tau)``; equations ``phi_tau(x) - x = 0``, ``H_sigma(x) = 0``
    and the section ``<X_H(seed), x - seed> = 0``.  The overdetermined system
    is solved in the least-squares sense with backtracking.  Iterates with
    ``|dH| < grad_min (1 + |x|)`` are treated as collapsing onto an equilibrium.
    """
    seed = np.asarray(getattr(seed, "state", seed), dtype=float)
    if not tau_guess > 0:
        raise ValueError("tau_guess must be positive")
    F = HamiltonianField(system, structure, sigma)
    normal = F(seed)
    nn = np.linalg.norm(normal)
    if nn < 1e-12:
        raise ConvergenceError("seed is an equilibrium: the flow direction vanishes")
    normal = normal / nn
    m = seed.size

    def residual(x, tau, phi):
        return np.concatenate([phi - x, [system.value(x, sigma)], [normal @ (x - seed)]])

    x, tau = seed.copy(), float(tau_guess)
    M = None
    best = None
    it = 0
    lam = 1.0
    while True:
        try:
            phi, M = flow_with_variational(F.with_jacobian, x, tau, integ_tol, control_matrix=False)
            r = residual(x, tau, phi)
            norm = float(np.linalg.norm(r))
        except IntegrationError:
            norm = np.inf
        if best is not None and not norm < best[2]:
            # backtrack along the last Newton direction
            lam *= 0.5
            if lam < 1e-3:
                raise ConvergenceError(f"line search failed (|F| = {best[2]:.3e})")
            bx, bt, _, step = best
            x, tau = bx + lam * step[:m], bt + lam * step[m]
            if tau <= tau_min:
                raise ConvergenceError(f"period collapsed below {tau_min:g}")
            continue
        _, g = system.gradient(x, sigma)
        if np.linalg.norm(g) < grad_min * (1.0 + np.linalg.norm(x)):
            raise ConvergenceError("iteration collapsed onto an equilibrium (dH = 0)")
        if norm <= tol:
            break
        if it == max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations (|F| = {norm:.3e})")
        it += 1
        J = np.zeros((m + 2, m + 1))
        J[:m, :m] = M - np.eye(m)
        J[:m, m] = F(phi)
        J[m, :m] = g
        J[m + 1, :m] = normal
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        best = (x, tau, norm, step)
        lam = 1.0
        x, tau = x + step[:m], tau + step[m]
        if tau <= tau_min:
            raise ConvergenceError(f"period collapsed below {tau_min:g}")
    if tau <= tau_min:
        raise ConvergenceError(f"period collapsed below {tau_min:g}")
    samples, closure = sample_orbit(F, x, tau, N, integ_tol)
    orbit = ParametrisedOrbit(float(sigma), float(tau), samples, "hamiltonian", float(tau),
                              {"closure": closure, "newton": norm, "iterations": it})
    res = orbit_residuals(orbit, system, structure, closure)
    res.update(newton=norm, iterations=it)
    orbit = replace(orbit, residuals=res)
    if compute_floquet:
        orbit = replace(orbit, floquet=floquet_from_monodromy(M, system, structure, x, sigma, floquet_tol))
    return orbit


# --------------------------------------------------------------------------
# re-timing


def _reeb_period(orbit, system, structure):
    fs = np.array([f_sigma(system, structure, x, orbit.sigma, check_level=False)
                   for x in orbit.samples])
    if not np.all(fs > 0):
        raise StabilityViolation("dH(X) is not positive along the orbit")
    return orbit.tau_hamiltonian * float(np.mean(fs)), fs


def reeb_normalize(orbit, system, structure, integ_tol=1e-12):
    """Re-time a Hamiltonian orbit so that it solves ``gamma' = tau_R * R(gamma)``.

    ``tau_R`` is the integral of ``f = dH(X)`` over one Hamiltonian period.
    The loop is re-integrated along the Reeb field from the same start point.
    """
    if orbit.normalization == "reeb":
        return orbit
    tau_r, _ = _reeb_period(orbit, system, structure)
    R = loop_field(system, structure, orbit.sigma, "reeb")
    samples, closure = sample_orbit(R, orbit.start, tau_r, orbit.N, integ_tol)
    out = ParametrisedOrbit(orbit.sigma, tau_r, samples, "reeb", orbit.tau_hamiltonian,
                            {}, orbit.floquet, orbit.flags)
    return replace(out, residuals=orbit_residuals(out, system, structure, closure))


def hamiltonian_orbit(orbit, system, structure, integ_tol=1e-12):
    """Inverse of :func:`reeb_normalize`."""
    if orbit.normalization == "hamiltonian":
        return orbit
    F = HamiltonianField(system, structure, orbit.sigma)
    samples, closure = sample_orbit(F, orbit.start, orbit.tau_hamiltonian, orbit.N, integ_tol)
    out = ParametrisedOrbit(orbit.sigma, orbit.tau_hamiltonian, samples, "hamiltonian",
                            orbit.tau_hamiltonian, {}, orbit.floquet, orbit.flags)
    return replace(out, residuals=orbit_residuals(out, system, structure, closure))


# --------------------------------------------------------------------------
# Floquet


def floquet_from_monodromy(M, system, structure, x0, sigma, tol=TOL_FLOQUET):
    """Multipliers with the trivial pair split off structurally.

    In the basis ``(X_H, Y, W)`` with ``dH(Y) = 1`` and ``W`` the symplectic
    complement of ``span{X_H, Y}``, the monodromy is block triangular with two
    diagonal ones; the remaining multipliers are the eigenvalues of the
    ``W``-block.  Counting them avoids the splitting of the Jordan pair that
    a plain eigensolve shows when the period varies with the energy.
    """
    M = np.asarray(M, dtype=float)
    m = M.shape[0]
    raw = np.linalg.eigvals(M)
    x0 = np.asarray(x0, dtype=float)
    v = HamiltonianField(system, structure, sigma)(x0)
    _, g = system.gradient(x0, sigma)
    Y = g / (g @ g)
    if m == 2:
        reduced = np.zeros(0, dtype=complex)
    else:
        W = structure.form_matrix(x0[: m // 2])
        comp = null_space(np.vstack([v @ W, Y @ W]))
        B = np.column_stack([v, Y, comp])
        red = np.linalg.solve(B, M @ B)[2:, 2:]
        reduced = np.linalg.eigvals(red)
    reduced = reduced[np.lexsort((reduced.imag, reduced.real))] if reduced.size else reduced
    mult = np.concatenate([np.ones(2, dtype=complex), reduced])
    units = 2 + int(np.sum(np.abs(reduced - 1.0) <= tol))
    return FloquetData(M, mult, units, raw, tol)


def floquet(orbit, system, structure, integ_tol=1e-12, tol=TOL_FLOQUET):
    """Monodromy of the Hamiltonian flow over one period and its multipliers."""
    F = HamiltonianField(system, structure, orbit.sigma)
    tau = orbit.tau_hamiltonian if orbit.tau_hamiltonian else orbit.tau
    _, M = flow_with_variational(F.with_jacobian, orbit.start, tau, integ_tol)
    return floquet_from_monodromy(M, system, structure, orbit.start, orbit.sigma, tol)


# --------------------------------------------------------------------------
# resampling


def _hermite_periodic(samples, derivs, t):
    N = samples.shape[0]
    u = (np.asarray(t, dtype=float) % 1.0) * N
    i0 = np.floor(u).astype(int) % N
    i1 = (i0 + 1) % N
    s = (u - np.floor(u))[:, None]
    h = 1.0 / N
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * samples[i0] + h10 * h * derivs[i0] + h01 * samples[i1] + h11 * h * derivs[i1]


def evaluate_loop(orbit, t, system=None, structure=None):
    """Loop position at parameters ``t`` (cubic Hermite between samples).

    Node derivatives are ``tau * V`` when the system is supplied, spectral
    derivatives of the samples otherwise.
    """
    if system is not None:
        V = loop_field(system, structure, orbit.sigma, orbit.normalization)
        d = orbit.tau * np.array([V(x) for x in orbit.samples])
    else:
        d = orbit.derivative()
    return _hermite_periodic(orbit.samples, d, np.atleast_1d(t))


def loop_resample(orbit, N, system=None, structure=None, check=False):
    """Resample the loop at ``N`` uniform parameters."""
    if N < 16:
        raise ValueError("N must be at least 16")
    if N == orbit.N:
        return replace(orbit, samples=orbit.samples.copy())
    samples = evaluate_loop(orbit, np.arange(N) / N, system, structure)
    out = replace(orbit, samples=samples)
    if system is not None:
        out = replace(out, residuals=orbit_residuals(out, system, structure))
        if check:
            check_residuals(out)
    return out


def shift_loop(orbit, shift):
    """Same loop started at parameter ``shift`` (spectral interpolation)."""
    s = orbit.samples
    N = s.shape[0]
    k = np.fft.fftfreq(N, d=1.0 / N)
    coef = np.fft.fft(s, axis=0) * np.exp(2j * np.pi * k * shift)[:, None]
    if N % 2 == 0:
        coef[N // 2] = np.real(np.fft.fft(s, axis=0)[N // 2]) * np.cos(np.pi * N * shift)
    return replace(orbit, samples=np.real(np.fft.ifft(coef, axis=0)))


def time_to_parameter(orbit, system, structure):
    """For a Hamiltonian orbit, the Reeb parameter of each sample.

    Inverse map from cumulative ``f``-weighted time; used for diagnostics.
    """
    tau_r, fs = _reeb_period(orbit, system, structure)
    N = orbit.N
    k = np.fft.fftfreq(N, d=1.0 / N)
    c = np.fft.fft(fs - fs.mean())
    with np.errstate(divide="ignore", invalid="ignore"):
        ci = np.where(k != 0, c / (2j * np.pi * k), 0.0)
    if N % 2 == 0:
        ci[N // 2] = 0.0
    periodic = np.real(np.fft.ifft(ci))
    cum = (fs.mean() * np.arange(N) / N + periodic - periodic[0]) * orbit.tau_hamiltonian
    return cum / tau_r


def hausdorff_to_loop(points, orbit, system=None, structure=None, refine=64):
    """Largest distance from ``points`` to the (interpolated) loop of ``orbit``."""
    dense_t = np.arange(orbit.N * refine) / (orbit.N * refine)
    dense = evaluate_loop(orbit, dense_t, system, structure)
    worst = 0.0
    for p in np.atleast_2d(points):
        d2 = np.sum((dense - p) ** 2, axis=1)
        j = int(np.argmin(d2))
        t0 = dense_t[j]
        h = 1.0 / (orbit.N * refine)

        def dist(t):
            return float(np.sum((evaluate_loop(orbit, [t], system, structure)[0] - p) ** 2))

        res = minimize_scalar(dist, bounds=(t0 - h, t0 + h), method="bounded",
                              options={"xatol": 1e-14})
        worst = max(worst, np.sqrt(min(float(res.fun), d2[j])))
    return worst


# --------------------------------------------------------------------------
# records


def floquet_to_record(fl):
    if fl is None:
        return None
    return {
        "multipliers": [[float(z.real), float(z.imag)] for z in fl.multipliers],
        "unit_count": int(fl.unit_count),
        "nondegenerate": bool(fl.nondegenerate),
        "monodromy": fl.monodromy.tolist(),
    }


def orbit_to_record(orbit):
    n = orbit.n
    return {
        "sigma": float(orbit.sigma),
        "tau": float(orbit.tau),
        "tau_hamiltonian": None if orbit.tau_hamiltonian is None else float(orbit.tau_hamiltonian),
        "normalization": orbit.normalization,
        "samples": [[x[:n].tolist(), x[n:].tolist()] for x in orbit.samples],
        "residuals": {k: float(v) for k, v in sorted(orbit.residuals.items())},
        "floquet": floquet_to_record(orbit.floquet),
        "flags": list(orbit.flags),
    }


def orbit_from_record(rec):
    samples = np.array([np.concatenate([q, p]) for q, p in rec["samples"]], dtype=float)
    fl = None
    if rec.get("floquet"):
        f = rec["floquet"]
        mult = np.array([complex(a, b) for a, b in f["multipliers"]])
        fl = FloquetData(np.array(f["monodromy"]), mult, int(f["unit_count"]))
    return ParametrisedOrbit(rec["sigma"], rec["tau"], samples, rec.get("normalization", "hamiltonian"),
                             rec.get("tau_hamiltonian"), dict(rec.get("residuals", {})), fl,
                             tuple(rec.get("flags", ())))
