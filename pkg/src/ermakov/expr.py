"""Small expression language for user-supplied scalar functions.

System coefficients (angular forcings, couplings, potentials) enter the
library as text and live as immutable syntax trees.  The grammar:

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?          right-associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

'^' binds tightest, unary minus sits below it (so "-x^2" is -(x^2) while
"x^-2" is a legal exponent).  Known function names: sin, cos, tan, exp,
ln, sqrt, abs.  Everything downstream (evaluation, differentiation,
quadrature) works on the trees built here.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

__all__ = [
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Expr",
    "FUNCTIONS",
    "ExprError",
    "ParseError",
    "EvalError",
    "DomainError",
    "QuadratureError",
    "parse",
    "to_text",
    "evaluate",
    "differentiate",
    "substitute",
    "free_vars",
    "quad_adaptive",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "abs")


class ExprError(ValueError):
    """Base class for expression-layer failures."""


class ParseError(ExprError):
    """Raised on malformed input; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    """Raised when evaluation refers to a variable with no binding."""


class DomainError(ExprError):
    """Raised when evaluation leaves the real domain (log of a negative
    number, division by zero, fractional power of a negative base, ...)."""


class QuadratureError(ExprError):
    """Raised when adaptive quadrature cannot deliver the requested tolerance."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Unary, Binary]

_NUMBER = re.compile(r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        if self.pos >= len(self.text):
            return ""
        return self.text[self.pos]

    def _fail(self, expected: str):
        self._skip_ws()
        found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
        raise ParseError(f"expected {expected}, found {found!r}", self.pos)

    def parse(self) -> Expr:
        node = self._expr()
        self._skip_ws()
        if self.pos < len(self.text):
            self._fail("end of input")
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while self._peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            node = Binary(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while self._peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            node = Binary(op, node, self._factor())
        return node

    def _factor(self) -> Expr:
        if self._peek() == "-":
            self.pos += 1
            return Unary("neg", self._factor())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self._peek() == "^":
            self.pos += 1
            # exponent at factor level: right-associative, may carry a sign
            return Binary("^", base, self._factor())
        return base

    def _atom(self) -> Expr:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            node = self._expr()
            if self._peek() != ")":
                self._fail("')'")
            self.pos += 1
            return node
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Num(float(m.group()))
        m = _NAME.match(self.text, self.pos)
        if m:
            name = m.group()
            name_at = self.pos
            self.pos = m.end()
            if self._peek() == "(":
                if name not in FUNCTIONS:
                    raise ParseError(f"unknown function {name!r}", name_at)
                self.pos += 1
                arg = self._expr()
                if self._peek() != ")":
                    self._fail("')'")
                self.pos += 1
                return Unary(name, arg)
            return Var(name)
        self._fail("a number, name or '('")


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises ParseError (with byte offset) on malformed input, including
    empty input and unknown function names.
    """
    return _Parser(text).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM_PREC = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return _ATOM_PREC


def to_text(e: Expr) -> str:
    """Render a tree with a minimal set of parentheses.

    For any tree the parser can produce, parse(to_text(e)) == e holds
    structurally.  (Trees with negative literals cannot come out of the
    parser; they render fine but reparse as negations.)
    """
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_text(e.arg)
            if _prec(e.arg) <= _PREC["*"]:
                inner = f"({inner})"
            return "-" + inner
        return f"{e.op}({to_text(e.arg)})"
    if isinstance(e, Binary):
        lhs, rhs = to_text(e.left), to_text(e.right)
        if e.op == "^":
            if _prec(e.left) <= _PREC["^"]:
                lhs = f"({lhs})"
            if _prec(e.right) < _PREC["neg"]:
                rhs = f"({rhs})"
        else:
            if _prec(e.left) < _PREC[e.op]:
                lhs = f"({lhs})"
            if _prec(e.right) <= _PREC[e.op]:
                rhs = f"({rhs})"
        return f"{lhs}{e.op}{rhs}"
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Unary):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate a tree under IEEE double semantics.

    Unknown variables raise EvalError naming the variable; real-domain
    violations raise DomainError.  Extra bindings are ignored.
    """
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Unary):
        x = evaluate(e.arg, bindings)
        if e.op == "neg":
            return -x
        if e.op == "abs":
            return abs(x)
        try:
            if e.op == "ln":
                return math.log(x)
            if e.op == "sqrt":
                return math.sqrt(x)
            return getattr(math, e.op)(x)
        except ValueError:
            raise DomainError(f"{e.op} of {x!r} is outside the real domain") from None
        except OverflowError:
            raise DomainError(f"{e.op} of {x!r} overflows") from None
    if isinstance(e, Binary):
        a = evaluate(e.left, bindings)
        b = evaluate(e.right, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise DomainError("division by zero")
            return a / b
        if e.op == "^":
            try:
                return math.pow(a, b)
            except ValueError:
                raise DomainError(
                    f"power {a!r}^{b!r} is outside the real domain"
                ) from None
            except OverflowError:
                raise DomainError(f"power {a!r}^{b!r} overflows") from None
    raise TypeError(f"not an expression node: {e!r}")


def substitute(e: Expr, var: str, replacement: Expr) -> Expr:
    """Replace every occurrence of variable ``var`` by ``replacement``."""
    if isinstance(e, Num):
        return e
    if isinstance(e, Var):
        return replacement if e.name == var else e
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, var, replacement))
    return Binary(
        e.op, substitute(e.left, var, replacement), substitute(e.right, var, replacement)
    )


def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic partial derivative with respect to ``var``.

    The result is deliberately unsimplified; correctness is checked by
    evaluation, not by pattern matching on the output tree.  d(abs)/dx is
    written as x/abs(x) times the inner derivative, which turns the kink
    at zero into an evaluation-time domain error.
    """
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if e.name == var else Num(0.0)
    if isinstance(e, Unary):
        f = e.arg
        df = differentiate(f, var)
        if e.op == "neg":
            return Unary("neg", df)
        if e.op == "sin":
            return Binary("*", Unary("cos", f), df)
        if e.op == "cos":
            return Binary("*", Unary("neg", Unary("sin", f)), df)
        if e.op == "tan":
            return Binary("/", df, Binary("^", Unary("cos", f), Num(2.0)))
        if e.op == "exp":
            return Binary("*", Unary("exp", f), df)
        if e.op == "ln":
            return Binary("/", df, f)
        if e.op == "sqrt":
            return Binary("/", df, Binary("*", Num(2.0), Unary("sqrt", f)))
        if e.op == "abs":
            return Binary("*", Binary("/", f, Unary("abs", f)), df)
    if isinstance(e, Binary):
        f, g = e.left, e.right
        df = differentiate(f, var)
        dg = differentiate(g, var)
        if e.op == "+":
            return Binary("+", df, dg)
        if e.op == "-":
            return Binary("-", df, dg)
        if e.op == "*":
            return Binary("+", Binary("*", df, g), Binary("*", f, dg))
        if e.op == "/":
            num = Binary("-", Binary("*", df, g), Binary("*", f, dg))
            return Binary("/", num, Binary("^", g, Num(2.0)))
        if e.op == "^":
            if isinstance(g, Num):
                # constant exponent: keeps negative bases evaluable
                return Binary(
                    "*",
                    Binary("*", g, Binary("^", f, Num(g.value - 1.0))),
                    df,
                )
            if isinstance(f, Num):
                return Binary(
                    "*", Binary("*", e, Unary("ln", f)), dg
                )
            # general case needs ln(base)
            inner = Binary(
                "+",
                Binary("*", dg, Unary("ln", f)),
                Binary("/", Binary("*", g, df), f),
            )
            return Binary("*", e, inner)
    raise TypeError(f"not an expression node: {e!r}")


def quad_adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float,
    max_depth: int = 50,
) -> float:
    """Integrate ``f`` over [a, b] to absolute tolerance ``tol``.

    Adaptive Simpson rule: each interval is halved and the two-panel
    estimate is compared with the one-panel estimate; agreement within
    15*tol accepts the Richardson-extrapolated value.  The orientation
    convention is the usual one, integral over [a,b] = -integral over
    [b,a].

    Raises QuadratureError on a non-finite integrand sample or when the
    subdivision limit is hit before the tolerance is met.
    """
    if not (tol > 0.0) or not math.isfinite(tol):
        raise ValueError(f"tolerance must be positive and finite, got {tol!r}")
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"bounds must be finite, got {a!r}, {b!r}")
    if a == b:
        return 0.0
    if b < a:
        return -quad_adaptive(f, b, a, tol, max_depth)

    def sample(x: float) -> float:
        y = float(f(x))
        if not math.isfinite(y):
            raise QuadratureError(f"non-finite integrand value {y!r} at lambda={x!r}")
        return y

    def simpson(lo: float, hi: float, flo: float, fmid: float, fhi: float) -> float:
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        flm = sample(lmid)
        frm = sample(rmid)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureError(
                f"subdivision limit {max_depth} reached on [{lo!r}, {hi!r}] "
                f"before tolerance was met"
            )
        half = 0.5 * eps
        return recurse(lo, mid, flo, flm, fmid, left, half, depth + 1) + recurse(
            mid, hi, fmid, frm, fhi, right, half, depth + 1
        )

    fa = sample(a)
    fb = sample(b)
    fm = sample(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 0)
