"""Natural-parameter continuation of periodic orbits in sigma.

Orbits are continued on the Hamiltonian flow (secant predictor in
``(x0, tau_H)``, Newton shooting as corrector) and stored Reeb-normalized
whenever the system carries a stabilizing field.
"""
import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContinuationError, ConvergenceError, IntegrationError
from .limitset import loop_distance
from .orbit import (NEWTON_TOL, TOL_FLOQUET, ParametrisedOrbit, find_periodic, floquet,
                    hamiltonian_orbit, orbit_from_record, orbit_to_record, reeb_normalize)

__all__ = [
    "OrbitCylinder", "continue_family", "period_profile", "envelope_check",
    "synthetic_cylinder", "TERMINATIONS",
]

TERMINATIONS = ("reached-target", "newton-failure", "degenerate-floquet", "step-underflow")


@dataclass
class OrbitCylinder:
    orbits: list
    sigma_start: float
    sigma_end: float
    termination: str = "reached-target"
    normalization: str = "reeb"
    max_step: float = None
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")
        s = [o.sigma for o in self.orbits]
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("cylinder sigmas must increase strictly")

    def __len__(self):
        return len(self.orbits)

    @property
    def sigmas(self):
        return np.array([o.sigma for o in self.orbits])

    @property
    def taus(self):
        return np.array([o.tau for o in self.orbits])

    @property
    def sigma_infinity(self):
        """Empirical end of the family: the last sigma with an accepted orbit."""
        return self.sigma_end

    def to_record(self):
        return {
            "sigma_start": float(self.sigma_start),
            "sigma_end": float(self.sigma_end),
            "termination": self.termination,
            "normalization": self.normalization,
            "max_step": self.max_step,
            "orbits": [orbit_to_record(o) for o in self.orbits],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_record(), **kw)

    @classmethod
    def from_record(cls, rec):
        orbits = [orbit_from_record(r) for r in rec["orbits"]]
        return cls(orbits, rec["sigma_start"], rec["sigma_end"], rec.get("termination", "reached-target"),
                   rec.get("normalization", "reeb"), rec.get("max_step"))

    def to_csv(self, kappa=None):
        """``sigma, tau, dtau`` and, given ``kappa``, the exponential envelope."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["sigma", "tau", "dtau"]
        if kappa is not None:
            head += ["lower", "upper"]
        w.writerow(head)
        if len(self) >= 2:
            s, t, d = period_profile(self)
        else:
            s, t, d = self.sigmas, self.taus, np.zeros(len(self))
        for i in range(len(s)):
            row = [repr(float(s[i])), repr(float(t[i])), repr(float(d[i]))]
            if kappa is not None:
                span = s[i] - s[0]
                with np.errstate(over="ignore"):
                    row += [repr(float(t[0] * np.exp(-kappa * span))), repr(float(t[0] * np.exp(kappa * span)))]
            w.writerow(row)
        return buf.getvalue()


def _state(orbit):
    return np.concatenate([orbit.start, [orbit.tau_hamiltonian]])


def continue_family(start, system, structure, sigma_target, max_step=0.05, min_step=1e-4,
                    N=None, tol=NEWTON_TOL, integ_tol=1e-12, normalization=None, max_iter=15,
                    floquet_tol=TOL_FLOQUET):
    """Continue ``start`` in sigma up to ``sigma_target``.

    The step is ``max_step`` unless a corrector fails, in which case it is
    halved (and doubled back after successes).  Termination causes:

    * ``reached-target``
    * ``newton-failure``: the corrector fails at the minimal step
    * ``degenerate-floquet``: the new orbit has more than two unit
      multipliers; it is kept as the last orbit
    * ``step-underflow``: the branch-jump guard keeps rejecting at the
      minimal step
    """
    if normalization is None:
        normalization = "reeb" if system.X is not None else "hamiltonian"
    if sigma_target < start.sigma:
        raise ValueError("sigma_target must not be below the start sigma")
    if not 0 < min_step <= max_step:
        raise ValueError("need 0 < min_step <= max_step")
    N = N or start.N
    current = hamiltonian_orbit(start, system, structure, integ_tol)
    fl = current.floquet or floquet(current, system, structure, integ_tol, floquet_tol)
    if fl.unit_count != 2:
        raise ContinuationError(f"start orbit is degenerate ({fl.unit_count} unit multipliers)")
    current = replace(current, floquet=fl)

    def finish(orb):
        return reeb_normalize(orb, system, structure, integ_tol) if normalization == "reeb" else orb

    orbits = [finish(current)]
    log = []
    history = [(current.sigma, _state(current))]
    sigma = current.sigma
    h = max_step
    termination = "reached-target"
    eps_sigma = 1e-12 * max(1.0, abs(sigma_target))
    while sigma_target - sigma > eps_sigma:
        h_try = min(h, sigma_target - sigma)
        if sigma_target - (sigma + h_try) <= eps_sigma:
            new_sigma = float(sigma_target)
        else:
            new_sigma = sigma + h_try
        z = history[-1][1]
        if len(history) >= 2:
            (s0, z0), (s1, z1) = history[-2], history[-1]
            pred = z1 + (z1 - z0) * (new_sigma - s1) / (s1 - s0)
        else:
            pred = z.copy()
        step_norm = float(np.linalg.norm(pred - z))
        failure = None
        try:
            cand = find_periodic(system, structure, pred[:-1], max(pred[-1], 1e-3), new_sigma, N=N,
                                 tol=tol, integ_tol=integ_tol, max_iter=max_iter, floquet_tol=floquet_tol)
        except (ConvergenceError, IntegrationError) as exc:
            failure = ("newton-failure", str(exc))
        else:
            gap = loop_distance(current, cand, derivative=False)
            limit = 10.0 * max(step_norm, h_try)
            if gap > limit:
                failure = ("step-underflow", f"branch jump suspected: distance {gap:.3e} > {limit:.3e}")
        if failure is not None:
            log.append({"sigma": float(new_sigma), "step": float(h_try), "reason": failure[1]})
            h = h_try / 2
            if h < min_step:
                termination = failure[0]
                break
            continue
        orbits.append(finish(cand))
        history.append((cand.sigma, _state(cand)))
        current = cand
        sigma = cand.sigma
        if cand.floquet is not None and cand.floquet.unit_count != 2:
            termination = "degenerate-floquet"
            break
        h = min(2 * h, max_step) if h < max_step else max_step
    if len(orbits) == 1 and termination != "reached-target" and sigma_target > start.sigma:
        raise ContinuationError(f"continuation failed at the first step ({termination})")
    return OrbitCylinder(orbits, float(start.sigma), float(orbits[-1].sigma), termination,
                         normalization, float(max_step), log)


def period_profile(cyl):
    """``(sigma, tau, dtau/dsigma)`` with second-order differences on the grid.

    Interior nodes use the three-point formula for nonuniform spacing, the
    ends one-sided three-point formulas (two-point when only two orbits).
    """
    s = cyl.sigmas if hasattr(cyl, "sigmas") else np.asarray(cyl[0])
    t = cyl.taus if hasattr(cyl, "taus") else np.asarray(cyl[1])
    if len(s) < 2:
        raise ValueError("period profile needs at least two orbits")
    if len(s) == 2:
        d = (t[1] - t[0]) / (s[1] - s[0])
        return s, t, np.array([d, d])
    return s, t, np.gradient(t, s, edge_order=2)


@dataclass
class EnvelopeReport:
    passed: bool
    kappa: float
    C: float
    lower: float
    pointwise_ok: bool
    envelope_ok: bool
    first_violation: int = None
    margins: list = field(default_factory=list)
    rates: list = field(default_factory=list)

    def to_record(self):
        return {
            "pass": bool(self.passed), "kappa": float(self.kappa), "C": float(self.C),
            "lower_bound": float(self.lower), "pointwise_ok": bool(self.pointwise_ok),
            "envelope_ok": bool(self.envelope_ok), "first_violation": self.first_violation,
            "margins": [float(m) for m in self.margins], "rates": [float(r) for r in self.rates],
        }


def envelope_check(cyl, kappa, slack=1e-5):
    """Pointwise rate bound ``|dtau/dsigma| <= kappa tau + slack`` and the
    two-sided exponential envelope anchored at the first orbit.

    A failure flags the cylinder as inconsistent with the stability
    hypotheses, i.e. a numerical or modelling fault.
    """
    if not kappa >= 1:
        raise ValueError("kappa must be >= 1")
    s, t = cyl.sigmas, cyl.taus
    tau0 = t[0]
    span = s[-1] - s[0]
    rel = s - s[0]
    with np.errstate(over="ignore"):
        # a huge kappa overflows to an infinite, vacuous bound
        C = tau0 * np.exp(kappa * span)
        growth = np.exp(kappa * span)
        upper = tau0 * np.exp(kappa * rel)
    lower = tau0 * np.exp(-kappa * rel)
    tol = slack + 1e-12 * np.abs(t)
    env_ok = (t <= upper + tol) & (t >= lower - tol)
    rates = []
    rate_ok = []
    first = None
    for i in range(1, len(s)):
        ds = s[i] - s[i - 1]
        r = abs(t[i] - t[i - 1]) / ds
        rates.append(r)
        # the secant rate is the derivative at an intermediate point, where tau <= max of the ends
        rate_ok.append(r <= kappa * max(t[i], t[i - 1]) + slack)
        if first is None and not (rate_ok[-1] and env_ok[i]):
            first = i
    with np.errstate(invalid="ignore"):
        margins = np.minimum(upper - t, t - lower) / np.maximum(t, 1e-300)
    pointwise = bool(all(rate_ok))
    envelope = bool(np.all(env_ok))
    return EnvelopeReport(pointwise and envelope, float(kappa), float(C),
                          float(1.0 / max(C, growth / tau0)), pointwise, envelope,
                          first, list(margins), rates)


def synthetic_cylinder(sigmas, tau_fn, radius_fn=None, N=64, normalization="reeb"):
    """Cylinder of planar circles ``r(sigma) e^{-2 pi i t}`` with prescribed periods.

    Used as a fixture for the certificate and limit-set checks; no dynamics
    are attached.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    radius_fn = radius_fn or (lambda s: 1.0)
    t = np.arange(N) / N
    orbits = []
    for s in sigmas:
        r = float(radius_fn(s))
        samples = np.column_stack([r * np.cos(2 * np.pi * t), -r * np.sin(2 * np.pi * t)])
        tau = float(tau_fn(s))
        orbits.append(ParametrisedOrbit(float(s), tau, samples, normalization, tau, {}, None, ("synthetic",)))
    return OrbitCylinder(orbits, float(sigmas[0]), float(sigmas[-1]), "reached-target", normalization)
