"""Limit sets of orbit cylinders.

A cylinder terminating at ``sigma_inf`` is examined through its tail: if
consecutive loops approach each other at a bounded rate, the tail is
extrapolated to ``sigma_inf``, the extrapolants are corrected when the system
is available, and the resulting candidates are clustered.

Compactness of a finite candidate set is automatic, so the report records
boundedness of the tail instead (largest period and largest ``|gamma|``).
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, IntegrationError, LimitSetError, StabilityViolation
from .orbit import (ParametrisedOrbit, find_periodic, loop_resample, orbit_residuals,
                    orbit_to_record, reeb_normalize, spectral_derivative)

__all__ = ["loop_distance", "LimitSetReport", "extract_limit_set", "cluster_candidates"]


def _shifted(samples, coef, k, s):
    """Samples of the band-limited interpolant shifted by parameter ``s``."""
    N = samples.shape[0]
    phase = np.exp(2j * np.pi * k * s)
    c = coef * phase[:, None]
    if N % 2 == 0:
        c[N // 2] = np.real(coef[N // 2]) * np.cos(np.pi * N * s)
    return np.real(np.fft.ifft(c, axis=0))


def loop_distance(a, b, derivative=True, refine=3):
    """Phase-aligned C^1 distance between two parametrised loops plus ``|tau_a - tau_b|``.

    Pointwise distances are Euclidean in phase space, so the value does not
    depend on how the loops are rotated.
    The minimum over cyclic shifts is found on the sample lattice first and
    then refined with a bounded Brent search using band-limited shifts.
    """
    A, B = np.asarray(a.samples), np.asarray(b.samples)
    if A.shape != B.shape:
        raise ValueError("loops must have equal sample counts; resample first")
    N = A.shape[0]
    dA = spectral_derivative(A) if derivative else None
    dB = spectral_derivative(B) if derivative else None
    dtau = abs(float(a.tau) - float(b.tau))

    def sup(u):
        return float(np.max(np.linalg.norm(u, axis=1)))

    def lattice(j):
        val = sup(A - np.roll(B, -j, axis=0))
        if derivative:
            val += sup(dA - np.roll(dB, -j, axis=0))
        return val

    scores = np.array([lattice(j) for j in range(N)])
    k = np.fft.fftfreq(N, d=1.0 / N)
    cB = np.fft.fft(B, axis=0)
    cdB = np.fft.fft(dB, axis=0) if derivative else None

    def cont(s):
        val = sup(A - _shifted(B, cB, k, s))
        if derivative:
            val += sup(dA - _shifted(dB, cdB, k, s))
        return val

    def smooth(s):
        # least-squares misfit: smooth in s, so its minimiser is located sharply
        val = np.sum((A - _shifted(B, cB, k, s)) ** 2)
        if derivative:
            val += np.sum((dA - _shifted(dB, cdB, k, s)) ** 2)
        return val

    best = float(scores.min())
    fine = np.linspace(-1.0, 1.0, 33) / N
    width = fine[1] - fine[0]
    for j in sorted(np.argsort(scores, kind="stable")[:refine]):
        # local offset from the lattice shift keeps Brent's relative tolerance tight;
        # the sup objective is only piecewise smooth, so bracket it on a fine grid first
        u0 = fine[int(np.argmin([cont(j / N + u) for u in fine]))]
        brackets = [(cont, u0 - width, u0 + width), (smooth, -1.0 / N, 1.0 / N)]
        for obj, lo, hi in brackets:
            res = minimize_scalar(lambda u: obj(j / N + u), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-15})
            best = min(best, float(cont(j / N + res.x)), float(cont(j / N + u0)))
    return best + dtau


@dataclass
class LimitSetReport:
    sigma_infinity: float
    candidates: list
    clusters: list
    cauchy_defect: float
    cauchy: bool
    connected: bool
    nonempty: bool
    eps_cluster: float
    tail_sigmas: list = field(default_factory=list)
    tail_distances: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_record(self, include_samples=True):
        return {
            "sigma_infinity": float(self.sigma_infinity),
            "nonempty": bool(self.nonempty),
            "connected": bool(self.connected),
            "cauchy": bool(self.cauchy),
            "cauchy_defect": float(self.cauchy_defect),
            "eps_cluster": float(self.eps_cluster),
            "clusters": [list(map(int, c)) for c in self.clusters],
            "bounds": {k: float(v) for k, v in sorted(self.bounds.items())},
            "notes": list(self.notes),
            "candidates": [orbit_to_record(c) if include_samples else
                           {"sigma": c.sigma, "tau": c.tau, "flags": list(c.flags)}
                           for c in self.candidates],
        }

    def distances_csv(self):
        lines = ["sigma,distance_to_limit"]
        for s, d in zip(self.tail_sigmas, self.tail_distances):
            lines.append(f"{float(s)!r},{float(d)!r}")
        return "\n".join(lines) + "\n"


def cluster_candidates(candidates, eps):
    """Single-linkage clusters (components of the ``eps``-graph), sorted."""
    n = len(candidates)
    if n == 0:
        return [], np.zeros((0, 0))
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = loop_distance(candidates[i], candidates[j])
    _, labels = connected_components(D <= eps, directed=False)
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return sorted(groups.values(), key=lambda g: g[0]), D


def _extrapolate(a, b, sigma):
    """Secant extrapolant of two aligned loops to ``sigma``."""
    w = (sigma - b.sigma) / (b.sigma - a.sigma)
    samples = b.samples + w * (b.samples - a.samples)
    tau = b.tau + w * (b.tau - a.tau)
    th = None
    if a.tau_hamiltonian is not None and b.tau_hamiltonian is not None:
        th = b.tau_hamiltonian + w * (b.tau_hamiltonian - a.tau_hamiltonian)
    if not tau > 0:
        return None
    return ParametrisedOrbit(float(sigma), float(tau), samples, b.normalization,
                             th if th and th > 0 else None, {}, None, ("extrapolant",))


def _correct(cand, system, structure, N, integ_tol):
    seed = cand.start
    tau_guess = cand.tau_hamiltonian or cand.tau
    orb = find_periodic(system, structure, seed, tau_guess, cand.sigma, N=N, integ_tol=integ_tol)
    if cand.normalization == "reeb":
        orb = reeb_normalize(orb, system, structure, integ_tol)
    return orb


def extract_limit_set(cyl, tail_fraction=0.2, eps_cluster=None, system=None, structure=None,
                      sigma_infinity=None, max_candidates=3, speed_ratio=10.0, integ_tol=1e-12):
    """Limit candidates of the cylinder at ``sigma_infinity`` (default: its end).

    The tail is the last ``tail_fraction`` of the sigma range.  It counts as
    Cauchy when no adjacent pair moves faster (distance per unit sigma) than
    ``speed_ratio`` times the median tail speed.  A non-Cauchy tail yields an
    empty report.  Otherwise secant extrapolants of the last tail pairs are
    corrected at ``sigma_infinity`` when a system is supplied and clustered
    by single linkage at ``eps_cluster`` (default ``10 * cauchy_defect``).
    """
    orbits = list(cyl.orbits)
    if not orbits:
        raise LimitSetError("empty cylinder")
    s_inf = float(cyl.sigma_end if sigma_infinity is None else sigma_infinity)
    s_first, s_last = orbits[0].sigma, orbits[-1].sigma
    cut = s_last - tail_fraction * (s_last - s_first)
    tail = [o for o in orbits if o.sigma >= cut - 1e-15]
    if len(tail) < 2 and len(orbits) >= 2:
        tail = orbits[-2:]
    N = max(o.N for o in tail)
    tail = [o if o.N == N else loop_resample(o, N) for o in tail]
    notes = []
    dists = [loop_distance(a, b) for a, b in zip(tail, tail[1:])]
    dsig = [b.sigma - a.sigma for a, b in zip(tail, tail[1:])]
    defect = float(max(dists)) if dists else 0.0
    speeds = np.array([d / s for d, s in zip(dists, dsig)])
    if speeds.size >= 2:
        med = float(np.median(speeds))
        cauchy = bool(np.max(speeds) <= speed_ratio * max(med, 1e-12))
    else:
        cauchy = True
    bounds = {"tau_max": float(max(o.tau for o in tail)),
              "gamma_sup": float(max(np.max(np.linalg.norm(o.samples, axis=1)) for o in tail))}
    if eps_cluster is None:
        eps_cluster = max(10.0 * defect, 1e-6)
    if not cauchy:
        notes.append("tail is not Cauchy: adjacent distances grow towards sigma_infinity")
        return LimitSetReport(s_inf, [], [], defect, False, False, False, float(eps_cluster),
                              [o.sigma for o in tail], [], bounds, notes)
    raw = []
    if len(tail) == 1 or abs(s_inf - tail[-1].sigma) <= 1e-14:
        raw.append(tail[-1])
    else:
        pairs = list(zip(tail, tail[1:]))[-max_candidates:]
        for a, b in reversed(pairs):
            c = _extrapolate(a, b, s_inf)
            if c is not None:
                raw.append(c)
    candidates = []
    for c in raw:
        if system is not None and "extrapolant" in c.flags:
            try:
                c = _correct(c, system, structure, N, integ_tol)
            except (ConvergenceError, IntegrationError, StabilityViolation) as exc:
                c = replace(c, flags=c.flags + ("corrector-failed",))
                notes.append(f"corrector diverged at sigma_infinity: {exc}")
        elif system is not None and not c.residuals:
            c = replace(c, residuals=orbit_residuals(c, system, structure))
        candidates.append(c)
    clusters, _ = cluster_candidates(candidates, eps_cluster)
    limit = candidates[0]
    tail_dist = [loop_distance(o, limit if limit.N == o.N else loop_resample(limit, o.N)) for o in tail]
    bounds["tau_max"] = max(bounds["tau_max"], max(c.tau for c in candidates))
    bounds["gamma_sup"] = max(bounds["gamma_sup"],
                              max(float(np.max(np.linalg.norm(c.samples, axis=1))) for c in candidates))
    return LimitSetReport(s_inf, candidates, clusters, defect, True, len(clusters) == 1,
                          bool(candidates), float(eps_cluster), [o.sigma for o in tail], tail_dist,
                          bounds, notes)
