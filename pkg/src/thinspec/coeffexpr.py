"""Small complex-valued expression language for coefficient functions.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are the variables ``x`` and ``xi``, the constants ``i`` and ``pi``,
the functions ``sin cos exp sqrt tanh sech`` and any declared parameter.

Evaluation is vectorised over numpy arrays; the scalar :func:`evaluate` is the
0-d case of the same code path, so grid and pointwise values agree bit for bit.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

VARIABLES = ("x", "xi")
CONSTANTS = ("i", "pi")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "tanh", "sech")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"coeffexpr.parse: {message} at byte offset {offset}{detail}")


class UnknownIdentifierError(ValueError):
    def __init__(self, name: str, offset: int, allowed: Iterable[str]):
        self.name = name
        self.offset = offset
        self.allowed = tuple(sorted(allowed))
        super().__init__(
            f"coeffexpr.parse: unknown identifier {name!r} at byte offset {offset}; "
            f"allowed names: {', '.join(self.allowed)}"
        )


class EvalError(ArithmeticError):
    """Raised on division by zero, bad powers or unbound names.

    ``subexpr`` is the printed offending subexpression and ``index`` the
    first failing grid position (``None`` for scalar evaluation).
    """

    def __init__(self, message: str, subexpr: str, index=None):
        self.subexpr = subexpr
        self.index = index
        where = f" at grid index {index}" if index is not None else ""
        super().__init__(f"coeffexpr.eval: {message} in {subexpr!r}{where}")


# --- AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str  # "i" or "pi"


@dataclass(frozen=True)
class Var:
    name: str  # "x" or "xi"


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Const, Var, Param, Neg, BinOp, Call]


def to_string(e: Expr) -> str:
    """Fully parenthesised rendering; ``parse(to_string(e)) == e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, (Const, Var, Param)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_names(e: Expr) -> set:
    if isinstance(e, (Var, Param)):
        return {e.name}
    if isinstance(e, Neg):
        return free_names(e.arg)
    if isinstance(e, BinOp):
        return free_names(e.left) | free_names(e.right)
    if isinstance(e, Call):
        return free_names(e.arg)
    return set()


# --- parser --------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            start = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[start]!r}", start,
                                  ("number", "name", "(", "-"))
        kind = m.lastgroup
        text = m.group(kind)
        tokens.append((kind, text, m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, params: Iterable[str]):
        self.tokens = _tokenize(src)
        self.k = 0
        self.params = frozenset(params)
        clash = self.params & set(VARIABLES + CONSTANTS + FUNCTIONS)
        if clash:
            raise ValueError(f"coeffexpr.parse: parameter names shadow builtins: {sorted(clash)}")

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, text: str):
        kind, t, off = self.peek()
        if t != text or kind == "end":
            raise ExprSyntaxError(f"unexpected {t or 'end of input'!r}", off, (text,))
        self.take()

    def parse(self) -> Expr:
        e = self.expr()
        kind, t, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {t!r}", off, ("+", "-", "*", "/", "^", "end"))
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in VARIABLES:
                return Var(text)
            if text in CONSTANTS:
                return Const(text)
            if text in self.params:
                return Param(text)
            raise UnknownIdentifierError(text, off, VARIABLES + CONSTANTS + FUNCTIONS + tuple(self.params))
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", off,
                              ("number", "name", "(", "-"))


def parse(src: str, params: Iterable[str] = ()) -> Expr:
    """Parse ``src`` into an expression tree; ``params`` lists allowed parameter names."""
    if not isinstance(src, str) or not src.strip():
        raise ExprSyntaxError("empty expression", 0, ("number", "name", "(", "-"))
    return _Parser(src, params).parse()


# --- evaluation ----------------------------------------------------------

def _first_bad(mask: np.ndarray):
    if mask.ndim == 0:
        return None
    return tuple(int(i) for i in np.argwhere(mask)[0])


def _is_integral(z: np.ndarray) -> np.ndarray:
    return (z.imag == 0) & (np.floor(z.real) == z.real) & np.isfinite(z.real)


def _ev(e: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if isinstance(e, Num):
        return np.complex128(e.value)
    if isinstance(e, Const):
        return np.complex128(1j) if e.name == "i" else np.complex128(np.pi)
    if isinstance(e, (Var, Param)):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound name {e.name!r}", to_string(e)) from None
    if isinstance(e, Neg):
        return -_ev(e.arg, env)
    if isinstance(e, Call):
        z = _ev(e.arg, env)
        if e.func == "sech":
            c = np.cosh(z)
            bad = c == 0
            if np.any(bad):
                raise EvalError("division by zero", to_string(e), _first_bad(np.asarray(bad)))
            return 1.0 / c
        return getattr(np, e.func)(z)
    a = _ev(e.left, env)
    b = _ev(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        bad = np.asarray(b == 0)
        if np.any(bad):
            idx = _first_bad(np.broadcast_to(bad, np.broadcast(a, b).shape))
            raise EvalError("division by zero", to_string(e), idx)
        return a / b
    # power
    a, b = np.broadcast_arrays(np.asarray(a), np.asarray(b))
    integral = _is_integral(b)
    neg_real = (a.imag == 0) & (a.real < 0)
    bad = neg_real & ~integral
    if np.any(bad):
        raise EvalError("non-integer power of a negative real base", to_string(e), _first_bad(bad))
    zero_neg = (a == 0) & (b.real < 0)
    if np.any(zero_neg):
        raise EvalError("division by zero", to_string(e), _first_bad(zero_neg))
    out = np.empty(a.shape, dtype=complex)
    if np.any(integral):
        out[integral] = np.power(a[integral], b[integral].real.astype(int).astype(float) + 0j)
    rest = ~integral
    if np.any(rest):
        out[rest] = np.power(a[rest], b[rest])
    return out if out.ndim else out[()]


def _environment(x, xi, params: Mapping[str, float]):
    env = {name: np.complex128(float(v)) for name, v in params.items()}
    env["x"] = np.asarray(x, dtype=float).astype(complex)
    env["xi"] = np.asarray(xi, dtype=float).astype(complex)
    return env


def evaluate(e: Expr, x: float = 0.0, xi: float = 0.0, params: Mapping[str, float] = None) -> complex:
    """Complex value of ``e`` at a single point."""
    env = _environment(x, xi, params or {})
    return complex(np.asarray(_ev(e, env)))


def eval_points(e: Expr, x, xi, params: Mapping[str, float] = None) -> np.ndarray:
    """Evaluate at broadcast-compatible arrays ``x`` and ``xi``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast(x, xi).shape
    env = _environment(x, xi, params or {})
    return np.broadcast_to(np.asarray(_ev(e, env), dtype=complex), shape).copy()


def eval_grid(e: Expr, xs, xis, params: Mapping[str, float] = None) -> np.ndarray:
    """Matrix with entry ``[a, b] = evaluate(e, xs[a], xis[b])``."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 1)
    xis = np.asarray(xis, dtype=float).reshape(1, -1)
    return eval_points(e, xs, xis, params)
