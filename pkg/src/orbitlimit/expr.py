"""Scalar field expressions: parsing, printing, evaluation and exact gradients.

Grammar (EBNF)::

    expr     = term , { ( "+" | "-" ) , term } ;
    term     = unary , { ( "*" | "/" ) , unary } ;
    unary    = ( "-" | "+" ) , unary | power ;
    power    = atom , [ ( "^" | "**" ) , unary ] ;
    atom     = number
             | identifier , [ "(" , [ arglist ] , ")" ]
             | "(" , expr , ")" ;
    arglist  = expr , { "," , expr } ;
    number   = digits , [ "." , digits ] , [ ( "e" | "E" ) , [ "+" | "-" ] , digits ] ;

Identifiers are declared variables (``q1 .. qn``, ``p1 .. pn``, ``sigma``),
the constant ``pi``, user constants, previously bound expressions (``H`` or
``H(x)``), or one of the functions ``sin cos tan exp log sqrt tanh abs2``.
``abs2(...)`` is the sum of squares of its arguments; the bare vector names
``q`` and ``p`` inside it expand to all of their components, so ``abs2(p)``
is ``|p|^2``.

``^`` is right associative and binds tighter than unary minus: ``-x^2`` is
``-(x^2)``.
"""
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import ad
from .errors import DomainError, ParseError, UnknownIdentifier

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Call", "Expr", "parse", "evaluate", "grad",
    "phase_variables", "FUNCTION_NAMES",
]

FUNCTION_NAMES = ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs2")
_VAR_PATTERN = re.compile(r"^(?:[qp][1-9][0-9]*|sigma)$")


def phase_variables(n, sigma=True):
    """Declared variable names ``(q1..qn, p1..pn[, sigma])``."""
    names = [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    if sigma:
        names.append("sigma")
    return tuple(names)


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


def free_variables(node):
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return free_variables(node.arg)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    out = frozenset()
    for a in node.args:
        out |= free_variables(a)
    return out


# precedence levels used by the printer
_ADD, _MUL, _UNARY, _POW, _ATOM = 1, 2, 3, 4, 5


def _level(node):
    if isinstance(node, BinOp):
        return {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}[node.op]
    if isinstance(node, Neg):
        return _UNARY
    return _ATOM


def to_source(node, min_level=0):
    """Canonical text of ``node``; ``parse(to_source(n))`` rebuilds ``n``."""
    if isinstance(node, Num):
        text = repr(float(node.value))
    elif isinstance(node, Var):
        text = node.name
    elif isinstance(node, Neg):
        text = "-" + to_source(node.arg, _UNARY)
    elif isinstance(node, Call):
        text = f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    elif node.op == "^":
        text = f"{to_source(node.left, _ATOM)}^{to_source(node.right, _UNARY)}"
    else:
        lvl = _level(node)
        text = f"{to_source(node.left, lvl)} {node.op} {to_source(node.right, lvl + 1)}"
    if _level(node) < min_level:
        text = f"({text})"
    return text


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {source[bad]!r}", bad)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if kind == "op" and text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source, variables, bindings, constants):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables = variables
        self.bindings = bindings
        self.constants = constants

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, t, pos = self.tok
        if t != text or kind == "end":
            what = "end of input" if kind == "end" else repr(t)
            raise ParseError(f"expected {text!r}, found {what}", pos)
        self.advance()

    def parse(self):
        node = self.expr()
        kind, t, pos = self.tok
        if kind != "end":
            raise ParseError(f"unexpected token {t!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok[0] == "op" and self.tok[1] in ("-", "+"):
            op = self.advance()[1]
            arg = self.unary()
            return Neg(arg) if op == "-" else arg
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.tok
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "id":
            self.advance()
            return self.identifier(text, pos)
        what = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"expected an operand, found {what}", pos)

    def arglist(self, vector_ok=False):
        self.expect("(")
        args = []
        if self.tok[1] == ")":
            self.advance()
            return args
        while True:
            kind, text, pos = self.tok
            nxt = self.tokens[self.i + 1][1] if self.i + 1 < len(self.tokens) else ""
            if vector_ok and kind == "id" and text in ("q", "p") and nxt in (",", ")"):
                self.advance()
                comps = [Var(v) for v in self._declared() if re.fullmatch(text + r"[1-9][0-9]*", v)]
                if not comps:
                    raise UnknownIdentifier(f"vector {text!r} has no declared components", pos)
                args.extend(comps)
            else:
                args.append(self.expr())
            if self.tok[1] == ",":
                self.advance()
                continue
            self.expect(")")
            return args

    def _declared(self):
        if self.variables is None:
            return ()
        return self.variables

    def identifier(self, name, pos):
        if name in FUNCTION_NAMES:
            if self.tok[1] != "(":
                raise ParseError(f"function {name!r} needs an argument list", self.tok[2])
            args = self.arglist(vector_ok=(name == "abs2"))
            if name == "abs2":
                if not args:
                    raise ParseError("abs2 needs at least one argument", pos)
            elif len(args) != 1:
                raise ParseError(f"{name} takes exactly one argument", pos)
            return Call(name, tuple(args))
        if name in self.bindings:
            if self.tok[1] == "(":
                # ``H(x)``: the bound expression evaluated at the current point
                self.advance()
                if self.tok[0] == "id" and self.tok[1] == "x":
                    self.advance()
                self.expect(")")
            return self.bindings[name]
        if name in self.constants:
            return Num(float(self.constants[name]))
        if name == "pi":
            return Num(math.pi)
        if self.variables is None:
            if _VAR_PATTERN.match(name):
                return Var(name)
        elif name in self.variables:
            return Var(name)
        raise UnknownIdentifier(f"unknown identifier {name!r}", pos)


# --------------------------------------------------------------------------
# compilation


def _fold(node):
    """Replace variable-free subtrees by their numeric value."""
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Neg):
        arg = _fold(node.arg)
        node = Neg(arg)
    elif isinstance(node, BinOp):
        node = BinOp(node.op, _fold(node.left), _fold(node.right))
    else:
        node = Call(node.func, tuple(_fold(a) for a in node.args))
    if not free_variables(node):
        return Num(float(_compile_tree(node, ())()))
    return node


_HELPERS = {
    "_div": ad.divide,
    "_pow": ad.power,
    **{f"_fn_{k}": v for k, v in ad.FUNCTIONS.items()},
}


def _emit(node, lines, cache):
    key = id(node)
    if key in cache:
        return cache[key]
    if isinstance(node, Num):
        out = repr(float(node.value))
    elif isinstance(node, Var):
        out = node.name
    else:
        if isinstance(node, Neg):
            rhs = f"-{_emit(node.arg, lines, cache)}"
        elif isinstance(node, BinOp):
            a = _emit(node.left, lines, cache)
            b = _emit(node.right, lines, cache)
            right = node.right
            if node.op == "/":
                if isinstance(right, Num) and right.value != 0:
                    rhs = f"{a} / {b}"
                else:
                    rhs = f"_div({a}, {b})"
            elif node.op == "^":
                if isinstance(right, Num) and right.value in (1.0, 2.0, 3.0, 4.0):
                    # small integer powers by repeated products
                    rhs = " * ".join([a] * int(right.value))
                else:
                    rhs = f"_pow({a}, {b})"
            else:
                rhs = f"{a} {node.op} {b}"
        elif node.func == "abs2":
            parts = [_emit(a, lines, cache) for a in node.args]
            rhs = " + ".join(f"{p} * {p}" for p in parts)
        else:
            rhs = f"_fn_{node.func}({_emit(node.args[0], lines, cache)})"
        out = f"_t{len(lines)}"
        lines.append(f"    {out} = {rhs}")
    cache[key] = out
    return out


def _compile_tree(node, variables):
    lines = []
    result = _emit(node, lines, {})
    src = f"def _f({', '.join(variables)}):\n" + "\n".join(lines + [f"    return {result}"])
    namespace = dict(_HELPERS)
    exec(compile(src, "<expr>", "exec"), namespace)
    fn = namespace["_f"]
    fn.source = src
    return fn


# --------------------------------------------------------------------------
# public expression type


class Expr:
    """Parsed scalar expression over an ordered set of declared variables.

    Calling the expression with positional values (in declared order) works
    for floats, numpy arrays (vectorised), :class:`~orbitlimit.ad.Dual` and
    :class:`~orbitlimit.ad.Jet2` inputs alike.
    """

    def __init__(self, node, variables):
        self.node = node
        self.variables = tuple(variables)
        self.free_variables = free_variables(node)
        self._fn = None

    def __repr__(self):
        return f"Expr({str(self)!r})"

    def __str__(self):
        return to_source(self.node)

    def __eq__(self, other):
        return isinstance(other, Expr) and self.node == other.node

    def __hash__(self):
        return hash(self.node)

    @property
    def is_constant(self):
        return not self.free_variables

    @property
    def function(self):
        if self._fn is None:
            self._fn = _compile_tree(_fold(self.node), self.variables)
        return self._fn

    def __call__(self, *values):
        return self.function(*values)

    def _positional(self, point):
        if isinstance(point, Mapping):
            missing = self.free_variables - set(point)
            if missing:
                raise KeyError(f"unassigned variables: {sorted(missing)}")
            return [point.get(v, 0.0) for v in self.variables]
        vals = list(point)
        if len(vals) != len(self.variables):
            raise ValueError(f"expected {len(self.variables)} values, got {len(vals)}")
        return vals

    def evaluate(self, point):
        vals = [float(v) for v in self._positional(point)]
        out = float(self.function(*vals))
        if not math.isfinite(out):
            raise DomainError(f"non-finite value {out!r} for {self}")
        return out

    def gradient(self, point, active=None):
        """Exact gradient with respect to ``active`` (default: all declared)."""
        vals = [float(v) for v in self._positional(point)]
        active = self.variables if active is None else tuple(active)
        index = {name: k for k, name in enumerate(active)}
        m = len(active)
        args = [ad.Dual.variable(v, index[name], m) if name in index else v
                for name, v in zip(self.variables, vals)]
        out = self.function(*args)
        if not isinstance(out, ad.Dual):
            return np.zeros(m)
        g = np.asarray(out.deriv, dtype=float)
        if not np.all(np.isfinite(g)) or not math.isfinite(out.value):
            raise DomainError(f"non-finite gradient for {self}")
        return g

    def jet(self, values, active_count=None):
        """Value, gradient and Hessian with respect to the first ``active_count``
        positional variables (default: all).
        """
        m = len(self.variables) if active_count is None else active_count
        args = [ad.Jet2.variable(v, k, m) if k < m else float(v)
                for k, v in enumerate(values)]
        out = self.function(*args)
        if not isinstance(out, ad.Jet2):
            return float(out), np.zeros(m), np.zeros((m, m))
        return out.value, out.grad, out.hess


def parse(source, variables=None, bindings=None, constants=None):
    """Parse ``source`` into an :class:`Expr`.

    ``variables`` is the declared variable tuple (see :func:`phase_variables`);
    ``None`` accepts any ``q<k>``/``p<k>``/``sigma`` name.  ``bindings`` maps
    names to previously parsed expressions, which are substituted inline.
    """
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 0)
    bindings = {k: (v.node if isinstance(v, Expr) else v) for k, v in (bindings or {}).items()}
    node = _Parser(source, variables, bindings, dict(constants or {})).parse()
    if variables is None:
        variables = tuple(sorted(free_variables(node), key=_var_order))
    return Expr(node, variables)


def _var_order(name):
    if name == "sigma":
        return (2, 0)
    return (0 if name[0] == "q" else 1, int(name[1:]))


def evaluate(e: Expr, point):
    return e.evaluate(point)


def grad(e: Expr, point, active: Sequence[str] = None):
    return e.gradient(point, active)
