"""Phase space, twisted symplectic form, Hamiltonian homotopies and stabilizers.

Conventions
-----------
States are flat arrays ``x = (q1..qn, p1..pn)``.  The symplectic form is

    omega = dp ^ dq + pi^* alpha,

represented by the form matrix ``Omega[i, j] = omega(e_i, e_j)``::

    Omega(q) = [[A(q), -I],
                [ I,    0]]

with ``A[i, j] = alpha(d/dq_i, d/dq_j)`` antisymmetric.  Hamiltonian vector
fields satisfy ``i_{X_H} omega = -dH``, i.e. ``Omega^T v = -grad H``.  With
``alpha = 0`` this gives ``qdot = dH/dp``, ``pdot = -dH/dq``, and the identity
``dH(X) = omega(X, X_H)`` holds for every vector ``X``.
"""
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import ad
from .errors import LevelSetError, SingularFormError, StabilityViolation
from .expr import Expr, parse, phase_variables
from .mollify import SmoothClamp

__all__ = [
    "PhasePoint", "SymplecticStructure", "HamiltonianHomotopy", "NormalizedHomotopy",
    "HamiltonianField", "hamiltonian_vector_field", "f_sigma", "liouville_form",
    "reeb_field", "stability_residual", "check_stability", "normalize_hamiltonian",
    "tangent_basis", "sample_level_set", "level_tolerance",
]

LEVEL_TOL = 1e-9


def level_tolerance(x, rel=LEVEL_TOL):
    """Level-set membership tolerance ``rel * (1 + |x|^2)``."""
    x = np.asarray(x, dtype=float)
    return rel * (1.0 + float(x @ x))


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if q.shape != p.shape:
            raise ValueError("q and p must have the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_state(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])

    @property
    def state(self):
        return np.concatenate([self.q, self.p])


def as_state(x):
    if isinstance(x, PhasePoint):
        return x.state
    return np.asarray(x, dtype=float).reshape(-1)


class SymplecticStructure:
    """``dp ^ dq`` plus an optional magnetic term ``alpha``.

    Parameters
    ----------
    n : int
        Half-dimension.
    alpha : mapping or array-like, optional
        Either ``{(i, j): coefficient}`` with ``i < j`` (0-based), or an
        ``n x n`` array whose strict upper triangle is used.  Coefficients are
        floats, expression strings or :class:`Expr` objects in ``q1..qn``.
    """

    def __init__(self, n, alpha=None, constants=None):
        self.n = int(n)
        self._entries = {}
        if alpha is not None:
            if isinstance(alpha, Mapping):
                items = alpha.items()
            else:
                arr = list(alpha)
                items = [((i, j), arr[i][j]) for i in range(n) for j in range(i + 1, n)]
            names = phase_variables(self.n)
            for (i, j), c in items:
                if not 0 <= i < j < n:
                    raise ValueError(f"alpha index {(i, j)} must satisfy 0 <= i < j < n")
                if isinstance(c, str):
                    c = parse(c, names, constants=constants)
                elif not isinstance(c, Expr):
                    c = float(c)
                    if c == 0.0:
                        continue
                if isinstance(c, Expr):
                    bad = {v for v in c.free_variables if not v.startswith("q")}
                    if bad:
                        raise ValueError(f"alpha may depend on q only, got {sorted(bad)}")
                    if c.is_constant:
                        c = c.evaluate([0.0] * len(names))
                self._entries[(i, j)] = c
        self.constant = all(not isinstance(c, Expr) for c in self._entries.values())
        self._const_A = self._assemble(np.zeros(n)) if self.constant else None

    @property
    def is_twisted(self):
        return bool(self._entries)

    def _assemble(self, q):
        A = np.zeros((self.n, self.n))
        if not self._entries:
            return A
        args = list(q) + [0.0] * (self.n + 1)
        for (i, j), c in self._entries.items():
            v = c.evaluate(args) if isinstance(c, Expr) else c
            A[i, j] = v
            A[j, i] = -v
        if not np.all(np.isfinite(A)):
            raise SingularFormError("magnetic coefficients are not finite")
        return A

    def alpha_matrix(self, q):
        if self._const_A is not None:
            return self._const_A
        return self._assemble(np.asarray(q, dtype=float))

    def alpha_jacobian(self, q):
        """``dA[i, j, k] = d A_ij / d q_k``."""
        n = self.n
        dA = np.zeros((n, n, n))
        if self.constant:
            return dA
        args = list(np.asarray(q, dtype=float)) + [0.0] * (n + 1)
        active = phase_variables(n)[:n]
        for (i, j), c in self._entries.items():
            if isinstance(c, Expr):
                g = c.gradient(args, active)
                dA[i, j] = g
                dA[j, i] = -g
        return dA

    def form_matrix(self, q):
        n = self.n
        W = np.zeros((2 * n, 2 * n))
        W[:n, :n] = self.alpha_matrix(q)
        W[:n, n:] = -np.eye(n)
        W[n:, :n] = np.eye(n)
        return W

    def pairing(self, x, u, w):
        """``omega_x(u, w)``."""
        q = as_state(x)[: self.n]
        return float(u @ self.form_matrix(q) @ w)

    def check(self, q_samples):
        """Antisymmetry and invertibility of the form at sampled ``q``."""
        for q in np.atleast_2d(q_samples):
            W = self.form_matrix(q)
            if not np.allclose(W, -W.T, atol=0.0):
                raise SingularFormError("form matrix is not antisymmetric")
            if abs(np.linalg.det(W)) < 1e-12:
                raise SingularFormError("form matrix is singular")
        return True


class HamiltonianHomotopy:
    """The family ``H(., sigma)`` together with a stabilizing field ``X``.

    ``H`` and the components of ``X`` are expressions in
    ``q1..qn, p1..pn, sigma`` (strings are parsed).
    """

    def __init__(self, H, n, X=None, constants=None, sigma_range=(0.0, 1.0), name=None):
        self.n = int(n)
        self.variables = phase_variables(self.n)
        self.H = H if isinstance(H, Expr) else parse(H, self.variables, constants=constants)
        if X is None:
            self.X = None
        else:
            if len(X) != 2 * self.n:
                raise ValueError(f"X needs {2 * self.n} components")
            self.X = tuple(c if isinstance(c, Expr) else parse(str(c), self.variables, constants=constants)
                           for c in X)
        self.sigma_range = tuple(float(s) for s in sigma_range)
        self.name = name
        m = 2 * self.n
        self._unit = np.eye(m)
        self._zero_h = np.zeros((m, m))

    # -- H and its derivatives -------------------------------------------
    def value(self, x, sigma):
        return float(self.H(*as_state(x), float(sigma)))

    def values(self, xs, sigma):
        """Vectorised ``H_sigma`` over rows of ``xs``."""
        xs = np.atleast_2d(xs)
        out = self.H(*xs.T, float(sigma))
        return np.broadcast_to(np.asarray(out, dtype=float), (xs.shape[0],)).copy()

    def gradient(self, x, sigma):
        """``(H, grad H)`` with respect to the phase variables."""
        x = as_state(x)
        args = [ad.Dual(v, self._unit[k]) for k, v in enumerate(x)]
        out = self.H(*args, float(sigma))
        if isinstance(out, ad.Dual):
            return float(out.value), np.asarray(out.deriv, dtype=float)
        return float(out), np.zeros(x.size)

    def jet(self, x, sigma):
        """``(H, grad H, Hess H)`` with respect to the phase variables."""
        x = as_state(x)
        args = [ad.Jet2(float(v), self._unit[k], self._zero_h) for k, v in enumerate(x)]
        out = self.H(*args, float(sigma))
        if isinstance(out, ad.Jet2):
            return out.value, out.grad, out.hess
        return float(out), np.zeros(x.size), self._zero_h.copy()

    # -- stabilizing field -------------------------------------------------
    def stabilizer(self, x, sigma):
        if self.X is None:
            raise StabilityViolation("no stabilizing vector field configured")
        x = as_state(x)
        return np.array([c(*x, float(sigma)) for c in self.X], dtype=float)

    def stabilizer_jacobian(self, x, sigma):
        """``(X, DX)`` with ``DX[i, j] = dX_i / dx_j``."""
        if self.X is None:
            raise StabilityViolation("no stabilizing vector field configured")
        x = as_state(x)
        m = x.size
        args = [ad.Dual(v, self._unit[k]) for k, v in enumerate(x)]
        vals = np.zeros(m)
        jac = np.zeros((m, m))
        for i, c in enumerate(self.X):
            out = c(*args, float(sigma))
            if isinstance(out, ad.Dual):
                vals[i] = out.value
                jac[i] = out.deriv
            else:
                vals[i] = out
        return vals, jac

    def on_level(self, x, sigma, rel=LEVEL_TOL):
        x = as_state(x)
        return abs(self.value(x, sigma)) <= level_tolerance(x, rel)


class NormalizedHomotopy(HamiltonianHomotopy):
    """``H / fbar`` where ``fbar`` smoothly clamps ``f = dH(X)``.

    On the zero level ``fbar = f`` so the Hamiltonian vector field of the
    normalized family is the Reeb field there.  The Hessian needs third
    derivatives of ``H``; they come from duals nested over second-order jets.
    """

    def __init__(self, base, clamp):
        self.base = base
        self.clamp = clamp
        self.n = base.n
        self.variables = base.variables
        self.H = None
        self.X = base.X
        self.sigma_range = base.sigma_range
        self.name = base.name
        self._unit = base._unit
        self._zero_h = base._zero_h

    def _f_first(self, x, sigma):
        # f and grad f from Hess H and DX
        h, g, hess = self.base.jet(x, sigma)
        X, DX = self.base.stabilizer_jacobian(x, sigma)
        return h, g, g @ X, hess @ X + DX.T @ g

    def value(self, x, sigma):
        h, g = self.base.gradient(x, sigma)
        X = self.base.stabilizer(x, sigma)
        return h / self.clamp(g @ X)

    def values(self, xs, sigma):
        return np.array([self.value(x, sigma) for x in np.atleast_2d(xs)])

    def gradient(self, x, sigma):
        h, g, f, df = self._f_first(x, sigma)
        c, c1, _ = self.clamp.derivatives(f)
        return h / c, g / c - h * c1 / c**2 * df

    def jet(self, x, sigma):
        x = as_state(x)
        m = x.size
        zero = ad.Jet2.constant(0.0, m)
        args = []
        for k, v in enumerate(x):
            d = np.array([zero] * m, dtype=object)
            d[k] = ad.Jet2.constant(1.0, m)
            args.append(ad.Dual(ad.Jet2.variable(v, k, m), d))
        out = self.base.H(*args, float(sigma))
        if not isinstance(out, ad.Dual):
            return float(out), np.zeros(m), np.zeros((m, m))
        hj = out.value if isinstance(out.value, ad.Jet2) else ad.Jet2.constant(out.value, m)
        dH = [d if isinstance(d, ad.Jet2) else ad.Jet2.constant(d, m) for d in out.deriv]
        xj = [ad.Jet2.variable(v, k, m) for k, v in enumerate(x)]
        f = zero
        for k, comp in enumerate(self.base.X):
            xk = comp(*xj, float(sigma))
            f = f + dH[k] * (xk if isinstance(xk, ad.Jet2) else float(xk))
        fbar = f._chain(*self.clamp.derivatives(f.value))
        G = hj / fbar
        return G.value, G.grad, G.hess


# --------------------------------------------------------------------------
# vector fields


class HamiltonianField:
    """``X_{H_sigma}`` at fixed ``sigma`` as a callable with an exact Jacobian."""

    def __init__(self, system, structure, sigma):
        if structure.n != system.n:
            raise ValueError("system and symplectic structure dimensions differ")
        self.system = system
        self.structure = structure
        self.sigma = float(sigma)
        self.n = system.n

    def _solve(self, q, grad):
        n = self.n
        Hq, Hp = grad[:n], grad[n:]
        A = self.structure.alpha_matrix(q)
        return np.concatenate([Hp, -Hq + A @ Hp])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        _, g = self.system.gradient(x, self.sigma)
        return self._solve(x[: self.n], g)

    def with_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        _, g, hess = self.system.jet(x, self.sigma)
        q = x[:n]
        A = self.structure.alpha_matrix(q)
        v = np.concatenate([g[n:], -g[:n] + A @ g[n:]])
        J = np.empty((2 * n, 2 * n))
        J[:n] = hess[n:]
        J[n:] = -hess[:n] + A @ hess[n:]
        if not self.structure.constant:
            dA = self.structure.alpha_jacobian(q)
            J[n:, :n] += np.einsum("ijk,j->ik", dA, g[n:])
        return v, J

    def energy(self, x):
        return self.system.value(x, self.sigma)


def hamiltonian_vector_field(system, structure, x, sigma):
    return HamiltonianField(system, structure, sigma)(as_state(x))


def _require_level(system, x, sigma, rel):
    h = system.value(x, sigma)
    if abs(h) > level_tolerance(x, rel):
        raise LevelSetError(f"point is off the level set: H = {h:.3e}")


def f_sigma(system, structure, x, sigma, check_level=True, level_rel=LEVEL_TOL):
    """``dH_sigma(X_sigma)(x)``; raises StabilityViolation when nonpositive."""
    x = as_state(x)
    if check_level:
        _require_level(system, x, sigma, level_rel)
    _, g = system.gradient(x, sigma)
    f = float(g @ system.stabilizer(x, sigma))
    if not f > 0:
        raise StabilityViolation(f"dH(X) = {f:.3e} is not positive at {x}")
    return f


def liouville_form(system, structure, x, sigma):
    """Covector of ``lambda_sigma = i_X omega`` at ``x`` (``Omega^T X``)."""
    x = as_state(x)
    W = structure.form_matrix(x[: structure.n])
    return W.T @ system.stabilizer(x, sigma)


def reeb_field(system, structure, x, sigma, check_level=True, level_rel=LEVEL_TOL):
    x = as_state(x)
    f = f_sigma(system, structure, x, sigma, check_level, level_rel)
    return hamiltonian_vector_field(system, structure, x, sigma) / f


def tangent_basis(grad):
    """Orthonormal basis of the hyperplane orthogonal to ``grad`` (columns)."""
    m = grad.size
    Q, _ = np.linalg.qr(np.column_stack([grad, np.eye(m)]))
    return Q[:, 1:m]


def _dlambda(system, structure, x, sigma, step):
    """Matrix of ``d lambda`` by central differences of ``lambda = i_X omega``."""
    m = x.size
    jac = np.empty((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = step
        jac[:, k] = (liouville_form(system, structure, x + e, sigma)
                     - liouville_form(system, structure, x - e, sigma)) / (2 * step)
    return jac.T - jac


def stability_residual(system, structure, x, sigma, step=1e-5, check_level=True):
    """``max_i |d lambda(R, v_i)|`` over an orthonormal tangent basis of the surface."""
    x = as_state(x)
    R = reeb_field(system, structure, x, sigma, check_level)
    if system.n == 1:
        return 0.0
    _, g = system.gradient(x, sigma)
    basis = tangent_basis(g)
    D = _dlambda(system, structure, x, sigma, step * (1.0 + np.linalg.norm(x)))
    return float(np.max(np.abs(R @ D @ basis)))


def check_stability(system, structure, sigma, samples, tol=1e-6):
    """Raise StabilityViolation unless every sample passes both stability tests.

    Returns a dict with the sampled ``f`` range and the largest residual.
    """
    fs, res = [], []
    for x in np.atleast_2d(samples):
        fs.append(f_sigma(system, structure, x, sigma))
        r = stability_residual(system, structure, x, sigma)
        if r > tol:
            raise StabilityViolation(f"stability residual {r:.3e} exceeds {tol:.1e} at {x}")
        res.append(r)
    return {"sigma": float(sigma), "f_min": min(fs), "f_max": max(fs),
            "max_residual": max(res), "samples": len(fs)}


def normalize_hamiltonian(system, kappa_hat, samples=None, sigma=0.0):
    """Replace ``H`` by ``H / fbar`` with ``fbar`` clamped into ``[1/(2k), 2k]``.

    ``fbar`` equals ``f = dH(X)`` wherever ``1/k <= f <= k``.  When level-set
    ``samples`` are given, ``f`` is checked positive there.
    """
    k = float(kappa_hat)
    if not k >= 1.0:
        raise ValueError("kappa_hat must be >= 1")
    if samples is not None:
        for x in np.atleast_2d(samples):
            _, g = system.gradient(x, sigma)
            f = g @ system.stabilizer(x, sigma)
            if not f > 0:
                raise StabilityViolation(f"dH(X) = {f:.3e} is not positive at {x}")
    return NormalizedHomotopy(system, SmoothClamp(1.0 / k, k, 1.0 / k, 2.0 * k))


def project_to_level(system, x, sigma, max_iter=50, rel=LEVEL_TOL):
    """Newton projection along the gradient onto ``H_sigma = 0``."""
    x = as_state(x).copy()
    for _ in range(max_iter):
        h, g = system.gradient(x, sigma)
        if abs(h) <= level_tolerance(x, rel) * 1e-2:
            return x
        gg = g @ g
        if not gg > 1e-24:
            return None
        x = x - h / gg * g
        if not np.all(np.isfinite(x)):
            return None
    h = system.value(x, sigma)
    return x if abs(h) <= level_tolerance(x, rel) else None


def sample_level_set(system, sigma, count, seed=0, scale=1.0, center=None, max_tries=None):
    """Points of ``H_sigma^{-1}(0)`` from Gaussian draws projected onto the level."""
    rng = np.random.default_rng(seed)
    m = 2 * system.n
    center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    out = []
    tries = 0
    max_tries = max_tries or 20 * count
    while len(out) < count and tries < max_tries:
        tries += 1
        x = project_to_level(system, center + scale * rng.standard_normal(m), sigma)
        if x is not None:
            out.append(x)
    if not out:
        raise LevelSetError(f"could not sample the level set at sigma={sigma}")
    return np.array(out)
