"""Forward-mode automatic differentiation.

Two number types are provided:

``Dual``
    value plus a gradient vector.  The value may itself be any ring element
    (a float, a :class:`Jet2`, another ``Dual``), so nesting gives higher
    derivatives when they are needed.
``Jet2``
    float value, gradient and Hessian carried together (second-order forward
    mode).  This is the fast path used by the variational equations.

The module-level functions (``sin``, ``log``, ...) dispatch on the argument
type and accept floats and numpy arrays as well.  They raise
:class:`~orbitlimit.errors.DomainError` instead of returning non-finite values.
"""
import math

import numpy as np

from .errors import DomainError

__all__ = [
    "Dual", "Jet2", "real", "sin", "cos", "tan", "exp", "log", "sqrt", "tanh",
    "power", "divide", "FUNCTIONS",
]


def real(x):
    """Innermost float (or array) value of a possibly nested AD number."""
    while isinstance(x, (Dual, Jet2)):
        x = x.value
    return x


def _is_const(x):
    return isinstance(x, (int, float, np.floating, np.integer))


class Dual:
    """First-order forward-mode number ``value + deriv . eps``."""

    __slots__ = ("value", "deriv")

    def __init__(self, value, deriv):
        self.value = value
        self.deriv = deriv

    @classmethod
    def variable(cls, value, index, size):
        d = np.zeros(size)
        d[index] = 1.0
        return cls(value, d)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.deriv!r})"

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.value + o.value, self.deriv + o.deriv)
        return Dual(self.value + o, self.deriv)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.value - o.value, self.deriv - o.deriv)
        return Dual(self.value - o, self.deriv)

    def __rsub__(self, o):
        return Dual(o - self.value, -self.deriv)

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __pos__(self):
        return self

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.value * o.value, self.deriv * o.value + self.value * o.deriv)
        return Dual(self.value * o, self.deriv * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            _check_nonzero(o)
            q = self.value / o.value
            return Dual(q, (self.deriv - q * o.deriv) / o.value)
        _check_nonzero(o)
        return Dual(self.value / o, self.deriv / o)

    def __rtruediv__(self, o):
        _check_nonzero(self)
        q = o / self.value
        return Dual(q, -q * self.deriv / self.value)

    def __pow__(self, c):
        if not _is_const(c):
            return NotImplemented
        f, f1 = _pow_scalar(self.value, c, 1)[:2]
        return Dual(f, f1 * self.deriv)

    def _unary(self, name):
        v = self.value
        fv = FUNCTIONS[name](v)
        if name == "sin":
            d = cos(v)
        elif name == "cos":
            d = -sin(v)
        elif name == "tan":
            d = 1.0 + fv * fv
        elif name == "exp":
            d = fv
        elif name == "log":
            d = 1.0 / v
        elif name == "sqrt":
            if not real(v) > 0:
                raise DomainError("derivative of sqrt at 0")
            d = 0.5 / fv
        elif name == "tanh":
            d = 1.0 - fv * fv
        else:  # pragma: no cover
            raise KeyError(name)
        return Dual(fv, d * self.deriv)


class Jet2:
    """Second-order forward-mode number: value, gradient and Hessian."""

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def variable(cls, value, index, size):
        g = np.zeros(size)
        g[index] = 1.0
        return cls(float(value), g, np.zeros((size, size)))

    @classmethod
    def constant(cls, value, size):
        return cls(float(value), np.zeros(size), np.zeros((size, size)))

    def __repr__(self):
        return f"Jet2({self.value!r}, {self.grad!r}, ...)"

    def __add__(self, o):
        if isinstance(o, Jet2):
            return Jet2(self.value + o.value, self.grad + o.grad, self.hess + o.hess)
        if _is_const(o):
            return Jet2(self.value + o, self.grad, self.hess)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Jet2):
            return Jet2(self.value - o.value, self.grad - o.grad, self.hess - o.hess)
        if _is_const(o):
            return Jet2(self.value - o, self.grad, self.hess)
        return NotImplemented

    def __rsub__(self, o):
        if _is_const(o):
            return Jet2(o - self.value, -self.grad, -self.hess)
        return NotImplemented

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __pos__(self):
        return self

    def __mul__(self, o):
        if type(o) is float:
            return Jet2(self.value * o, self.grad * o, self.hess * o)
        if isinstance(o, Jet2):
            a, b = self.value, o.value
            cross = np.multiply.outer(self.grad, o.grad)
            return Jet2(a * b, self.grad * b + a * o.grad,
                        self.hess * b + a * o.hess + cross + cross.T)
        if _is_const(o):
            return Jet2(self.value * o, self.grad * o, self.hess * o)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet2):
            return self * o._chain(*_recip_scalar(o.value))
        if _is_const(o):
            _check_nonzero(o)
            return Jet2(self.value / o, self.grad / o, self.hess / o)
        return NotImplemented

    def __rtruediv__(self, o):
        if _is_const(o):
            return self._chain(*_recip_scalar(self.value)) * o
        return NotImplemented

    def __pow__(self, c):
        if not _is_const(c):
            return NotImplemented
        return self._chain(*_pow_scalar(self.value, c, 2))

    def _chain(self, f, f1, f2):
        g = self.grad
        return Jet2(f, f1 * g, f1 * self.hess + f2 * np.multiply.outer(g, g))

    def _unary(self, name):
        v = self.value
        if name == "sin":
            s, c = math.sin(v), math.cos(v)
            return self._chain(s, c, -s)
        if name == "cos":
            s, c = math.sin(v), math.cos(v)
            return self._chain(c, -s, -c)
        if name == "tan":
            t = _checked(math.tan, v, "tan")
            return self._chain(t, 1.0 + t * t, 2.0 * t * (1.0 + t * t))
        if name == "exp":
            e = _checked(math.exp, v, "exp")
            return self._chain(e, e, e)
        if name == "log":
            if not v > 0:
                raise DomainError(f"log of nonpositive value {v!r}")
            return self._chain(math.log(v), 1.0 / v, -1.0 / (v * v))
        if name == "sqrt":
            if not v > 0:
                raise DomainError(f"derivative of sqrt at {v!r}")
            s = math.sqrt(v)
            return self._chain(s, 0.5 / s, -0.25 / (s * v))
        if name == "tanh":
            t = math.tanh(v)
            return self._chain(t, 1.0 - t * t, -2.0 * t * (1.0 - t * t))
        raise KeyError(name)  # pragma: no cover


def _checked(fn, v, name):
    try:
        out = fn(v)
    except OverflowError:
        raise DomainError(f"{name} overflow at {v!r}") from None
    if not math.isfinite(out):
        raise DomainError(f"{name} non-finite at {v!r}")
    return out


def _check_nonzero(x):
    v = real(x)
    if np.any(np.asarray(v) == 0):
        raise DomainError("division by zero")


def _recip_scalar(v):
    if v == 0:
        raise DomainError("division by zero")
    r = 1.0 / v
    return r, -r * r, 2.0 * r * r * r


def _pow_scalar(v, c, order):
    """Value and first ``order`` derivatives of ``v**c`` for constant ``c``.

    ``v`` may be a float or a nested AD number (for ``Dual`` over rings).
    """
    c = float(c)
    integral = c.is_integer()
    rv = real(v)
    if not integral and rv < 0:
        raise DomainError(f"non-integer power {c!r} of negative value")
    if rv == 0 and c < 0:
        raise DomainError("zero raised to a negative power")
    if rv == 0 and not integral and c < order:
        raise DomainError("derivative of fractional power at 0")
    if c == 0:
        return 1.0, 0.0, 0.0
    out = [v ** c, c * v ** (c - 1) if c != 1 else 1.0]
    if order >= 2:
        out.append(c * (c - 1) * v ** (c - 2) if c not in (1.0, 2.0) else (2.0 if c == 2 else 0.0))
    else:
        out.append(None)
    return tuple(out)


def _array_fn(np_fn, name, check=None):
    def fn(x):
        if isinstance(x, (Dual, Jet2)):
            return x._unary(name)
        if check is not None:
            check(x)
        with np.errstate(over="raise", invalid="raise"):
            try:
                out = np_fn(x)
            except FloatingPointError:
                raise DomainError(f"{name} produced a non-finite value") from None
        return out

    fn.__name__ = name
    return fn


def _check_log(x):
    if np.any(~(np.asarray(x) > 0)):
        raise DomainError("log of nonpositive value")


def _check_sqrt(x):
    if np.any(~(np.asarray(x) >= 0)):
        raise DomainError("sqrt of negative value")


sin = _array_fn(np.sin, "sin")
cos = _array_fn(np.cos, "cos")
tan = _array_fn(np.tan, "tan")
exp = _array_fn(np.exp, "exp")
log = _array_fn(np.log, "log", _check_log)
sqrt = _array_fn(np.sqrt, "sqrt", _check_sqrt)
tanh = _array_fn(np.tanh, "tanh")

FUNCTIONS = {
    "sin": sin, "cos": cos, "tan": tan, "exp": exp,
    "log": log, "sqrt": sqrt, "tanh": tanh,
}


def divide(a, b):
    if not isinstance(b, (Dual, Jet2)):
        _check_nonzero(b)
    return a / b


def power(a, b):
    """``a ** b``; a non-constant exponent goes through ``exp(b * log(a))``."""
    if isinstance(b, (Dual, Jet2)):
        return exp(b * log(a))
    if isinstance(b, np.ndarray):
        if np.all(b == b.flat[0]):
            b = float(b.flat[0])
        else:
            return exp(b * log(a))
    if isinstance(a, (Dual, Jet2)):
        return a ** b
    a_arr = np.asarray(a, dtype=float)
    c = float(b)
    if not c.is_integer() and np.any(a_arr < 0):
        raise DomainError(f"non-integer power {c!r} of negative value")
    if c < 0 and np.any(a_arr == 0):
        raise DomainError("zero raised to a negative power")
    with np.errstate(over="raise"):
        try:
            return np.power(a_arr, c) if a_arr.ndim else float(a_arr) ** c
        except (FloatingPointError, OverflowError):
            raise DomainError("power overflow") from None
