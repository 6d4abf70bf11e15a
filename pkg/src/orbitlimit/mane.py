"""Critical value estimates for mechanical systems on flat tori.

For ``H(q, p) = 1/2 |p|^2_{m*} + V(q)`` with magnetic form ``alpha`` on the
torus ``R^n / (2 pi Z)^n`` we estimate

    c = inf_beta sup_q H(q, beta_q)

over primitives of the lifted ``alpha``.  When ``alpha = d beta0`` with
``beta0`` periodic, every primitive on the cover is ``beta0 + c + dF``; we
search over constant ``c`` and trigonometric ``f`` of bounded degree.  The
objective is a maximum of convex quadratics, so after the smoothed stage the
best point is polished on the exact grid maximum.

A nonzero constant part ``B`` of ``alpha`` cannot be exact on the cover with
bounded primitive: by Stokes, every primitive has ``sup |beta| >= |B| R / 2``
on the circle of radius ``R``, hence ``c = +inf``.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .expr import Expr, parse

__all__ = ["ManeProblem", "ManeResult", "mane_estimate", "detect_unbounded", "fourier_modes"]

TEMPERATURES = (1.0, 0.3, 0.1, 0.03)


@dataclass
class ManeProblem:
    n: int
    V: object = "0"
    metric: object = None
    beta0: object = None
    B: object = 0.0
    alpha: object = None
    constants: dict = None

    def __post_init__(self):
        self.n = int(self.n)
        names = [f"q{i + 1}" for i in range(self.n)]
        self.names = names
        m = np.eye(self.n) if self.metric is None else np.asarray(self.metric, dtype=float)
        if m.shape != (self.n, self.n) or not np.allclose(m, m.T):
            raise ValueError("metric must be a symmetric n x n matrix")
        if np.min(np.linalg.eigvalsh(m)) <= 0:
            raise ValueError("metric must be positive definite")
        self.metric = m
        self.metric_inv = np.linalg.inv(m)
        self.V = self.V if isinstance(self.V, Expr) else parse(str(self.V), names, constants=self.constants)
        if self.beta0 is not None:
            if len(self.beta0) != self.n:
                raise ValueError(f"beta0 needs {self.n} components")
            self.beta0 = [b if isinstance(b, Expr) else parse(str(b), names, constants=self.constants)
                          for b in self.beta0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 0:
            if self.n < 2 and B != 0:
                raise ValueError("a constant magnetic part needs n >= 2")
            Bm = np.zeros((self.n, self.n))
            if self.n >= 2:
                Bm[0, 1], Bm[1, 0] = float(B), -float(B)
            B = Bm
        if B.shape != (self.n, self.n) or not np.allclose(B, -B.T):
            raise ValueError("B must be a scalar or an antisymmetric n x n matrix")
        self.B = B
        if self.alpha is not None:
            self.check_primitive(self.alpha)

    @property
    def exact(self):
        return not np.any(self.B)

    def check_primitive(self, alpha, count=16, seed=0, tol=1e-10):
        """``d beta0`` matches ``alpha`` (``{(i, j): expr}``) at random points."""
        rng = np.random.default_rng(seed)
        entries = {}
        for (i, j), c in dict(alpha).items():
            entries[(i, j)] = c if isinstance(c, Expr) else parse(str(c), self.names, constants=self.constants)
        for _ in range(count):
            q = rng.uniform(0, 2 * np.pi, self.n)
            grads = [b.gradient(q) if self.beta0 else np.zeros(self.n) for b in (self.beta0 or [None] * self.n)]
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    d = grads[j][i] - grads[i][j]
                    want = entries[(i, j)].evaluate(q) if (i, j) in entries else 0.0
                    want += self.B[i, j]
                    if abs(d + self.B[i, j] - want) > tol:
                        raise ValueError(f"d(beta0) does not match alpha on component {(i, j)}")
        return True

    def grid(self, size):
        axis = 2 * np.pi * np.arange(size) / size
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def potential(self, Q):
        return np.broadcast_to(np.asarray(self.V(*Q.T), dtype=float), (Q.shape[0],)).copy()

    def primitive(self, Q):
        out = np.zeros_like(Q)
        if self.beta0 is not None:
            for i, b in enumerate(self.beta0):
                out[:, i] = np.broadcast_to(np.asarray(b(*Q.T), dtype=float), (Q.shape[0],))
        return out


def fourier_modes(n, degree):
    """Nonzero integer vectors with ``|k|_inf <= degree``, one of each ``+-k`` pair."""
    modes = []
    for k in itertools.product(range(-degree, degree + 1), repeat=n):
        k = np.array(k)
        nz = np.flatnonzero(k)
        if nz.size and k[nz[0]] > 0:
            modes.append(k)
    return np.array(modes, dtype=float).reshape(-1, n)


class _Objective:
    """Values ``1/2 |beta|^2_{m*} + V`` on the grid as functions of the coefficients."""

    def __init__(self, prob, degree, grid):
        self.prob = prob
        Q = prob.grid(grid)
        self.V = prob.potential(Q)
        self.beta0 = prob.primitive(Q)
        modes = fourier_modes(prob.n, degree)
        phase = Q @ modes.T
        # d/dq of a cos(k.q) + b sin(k.q): k (-a sin + b cos)
        s, c = np.sin(phase), np.cos(phase)
        basis = [np.zeros((Q.shape[0], prob.n)) + e for e in np.eye(prob.n)]
        for j, k in enumerate(modes):
            basis.append(-s[:, j, None] * k)
            basis.append(c[:, j, None] * k)
        self.D = np.stack(basis, axis=2)  # (points, n, params)
        self.size = self.D.shape[2]
        self.modes = modes

    def values(self, theta):
        beta = self.beta0 + self.D @ theta
        return 0.5 * np.einsum("pi,ij,pj->p", beta, self.prob.metric_inv, beta) + self.V, beta

    def jac(self, beta):
        return np.einsum("pi,ij,pjk->pk", beta, self.prob.metric_inv, self.D)

    def soft(self, theta, T):
        vals, beta = self.values(theta)
        lse = T * logsumexp(vals / T)
        w = np.exp(vals / T - lse / T)
        return lse, w @ self.jac(beta)

    def exact(self, theta):
        return float(np.max(self.values(theta)[0]))


def _polish(obj, theta, rounds=12, tol=1e-11):
    """Minimise the exact grid maximum from ``theta`` (epigraph form on an active set)."""
    vals, _ = obj.values(theta)
    keep = max(4 * obj.size, 64)
    active = np.argsort(-vals)[:keep]
    best_t, best_val = theta, float(vals.max())
    for _ in range(rounds):
        idx = active

        def cons(z):
            v, _ = obj.values(z[:-1])
            return z[-1] - v[idx]

        def cons_jac(z):
            _, beta = obj.values(z[:-1])
            J = obj.jac(beta)[idx]
            return np.hstack([-J, np.ones((idx.size, 1))])

        z0 = np.append(best_t, best_val)
        res = minimize(lambda z: z[-1], z0, jac=lambda z: np.eye(z.size)[-1], method="SLSQP",
                       constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                       options={"maxiter": 300, "ftol": 1e-14})
        cand = res.x[:-1]
        vals, _ = obj.values(cand)
        val = float(vals.max())
        if val < best_val:
            best_t, best_val = cand, val
        viol = np.flatnonzero(vals > res.x[-1] + tol)
        if viol.size == 0:
            break
        active = np.union1d(active, viol[np.argsort(-vals[viol])][:keep])
    return best_t, best_val


@dataclass
class ManeResult:
    c: float
    degree: int
    grid: int
    converged: bool
    restarts_agreeing: int
    restarts: int
    values: list = field(default_factory=list)
    certificate: dict = None

    def to_record(self):
        return {"c": self.c if np.isfinite(self.c) else "inf", "degree": self.degree, "grid": self.grid,
                "converged": bool(self.converged), "restarts_agreeing": int(self.restarts_agreeing),
                "restarts": int(self.restarts), "certificate": self.certificate}


def mane_estimate(prob, degree=4, grid=32, restarts=8, seed=0, polish=True, agree_tol=1e-3):
    """Estimate of the critical value on a ``grid^n`` mesh of the torus.

    Each restart runs L-BFGS on the log-sum-exp smoothed maximum through the
    temperatures ``1, 0.3, 0.1, 0.03``; the best point is then polished on the
    exact grid maximum.  The returned value is an exact grid maximum.
    """
    if degree < 0:
        raise ValueError("fourier degree must be >= 0")
    if not prob.exact:
        cert = detect_unbounded(prob)
        return ManeResult(np.inf, degree, grid, True, restarts, restarts, [], cert)
    obj = _Objective(prob, degree, grid)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(obj.size)] + [0.3 * rng.standard_normal(obj.size) for _ in range(restarts)]
    finals = []
    thetas = []
    ok = True
    for theta in starts:
        for T in TEMPERATURES:
            res = minimize(obj.soft, theta, args=(T,), jac=True, method="L-BFGS-B",
                           options={"maxiter": 2000, "gtol": 1e-10})
            theta = res.x
        ok = ok and bool(res.success or res.status == 2)
        finals.append(obj.exact(theta))
        thetas.append(theta)
    best = int(np.argmin(finals))
    value = finals[best]
    if polish:
        _, value = _polish(obj, thetas[best])
        value = min(value, finals[best])
    agreeing = int(sum(abs(v - min(finals)) <= agree_tol for v in finals[1:]))
    return ManeResult(float(value), degree, grid, ok, agreeing, restarts, [float(v) for v in finals])


def detect_unbounded(prob, radii=(1.0, 10.0, 100.0)):
    """Stokes witness that the critical value is infinite for non-exact ``alpha``.

    On the disc of radius ``R`` in the plane of the largest constant
    component ``B``, every primitive has flux ``B pi R^2`` through the
    boundary circle of length ``2 pi R``, so ``sup |beta| >= |B| R / 2``.
    """
    if prob.exact:
        raise ValueError("alpha is exact on the torus: no constant magnetic part")
    i, j = np.unravel_index(np.argmax(np.abs(prob.B)), prob.B.shape)
    B = float(prob.B[i, j])
    lam_max = float(np.max(np.linalg.eigvalsh(prob.metric)))
    Q = prob.grid(16)
    vmin = float(np.min(prob.potential(Q)))
    witness = []
    for R in radii:
        sup_beta = abs(B) * R / 2.0
        witness.append({"radius": float(R), "flux": float(abs(B) * np.pi * R * R),
                        "circumference": float(2 * np.pi * R), "sup_beta_lower": sup_beta,
                        "energy_lower": 0.5 * sup_beta**2 / lam_max + vmin})
    return {"c": "inf", "B": B, "plane": [int(i) + 1, int(j) + 1], "witness": witness}
