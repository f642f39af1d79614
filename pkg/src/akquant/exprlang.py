"""Small arithmetic expression language for chart functions.

Grammar (left-associative, ^ binds tightest, then unary minus, then * /,
then + -):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' exponent)?
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' factor
    exponent := ('-')? INT  |  '(' ('-')? INT ('/' INT)? ')'

Identifiers are either chart coordinates or one of the built-in analytic
functions.  Decimal literals are kept exact (Fraction via Decimal) until a
jet is built.  Exponents are integer or rational literals; a rational
exponent must be parenthesized (`y3^(1/2)`) so that `y3^2/2` keeps its
ordinary meaning (y3^2)/2.
"""

from __future__ import annotations

import cmath
import re
from decimal import Decimal
from fractions import Fraction

from .errors import DomainError, ParseError, UnknownSymbolError
from .jets import Chart, Jet

FUNCTIONS = ("exp", "log", "sin", "cos", "sinh", "cosh", "sqrt", "abs")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<id>[a-zA-Z][a-zA-Z0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            # skip pure whitespace tails
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos:].lstrip()[0]!r}", pos)
        if m.group("num") is not None:
            out.append(("num", m.group("num"), m.start("num")))
        elif m.group("id") is not None:
            out.append(("id", m.group("id"), m.start("id")))
        else:
            out.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect_op(self, op):
        kind, val, pos = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}", pos)

    # grammar -------------------------------------------------------------

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                node = ("bin", val, node, rhs, pos)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.factor()
                node = ("bin", val, node, rhs, pos)
            else:
                return node

    def factor(self):
        node = self.base()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.next()
            p = self.exponent()
            node = ("pow", node, p, pos)
        return node

    def exponent(self, parenthesized=False) -> Fraction:
        kind, val, pos = self.peek()
        if kind == "op" and val == "(":
            self.next()
            p = self.exponent(parenthesized=True)
            self.expect_op(")")
            return p
        sign = 1
        if kind == "op" and val == "-":
            self.next()
            sign = -1
            kind, val, pos = self.peek()
        if kind != "num" or "." in val or "e" in val or "E" in val:
            raise ParseError("exponent must be an integer or rational literal", pos)
        self.next()
        num = int(val)
        if parenthesized:
            kind2, val2, _ = self.peek()
            if kind2 == "op" and val2 == "/":
                self.next()
                kind3, val3, pos3 = self.next()
                if kind3 != "num" or "." in val3 or "e" in val3 or "E" in val3:
                    raise ParseError("rational exponent denominator must be an integer", pos3)
                return Fraction(sign * num, int(val3))
        return Fraction(sign * num)

    def base(self):
        kind, val, pos = self.next()
        if kind == "num":
            return ("num", Fraction(Decimal(val)), pos)
        if kind == "id":
            k2, v2, _ = self.peek()
            if k2 == "op" and v2 == "(":
                self.next()
                arg = self.expr()
                self.expect_op(")")
                if val not in FUNCTIONS:
                    raise UnknownSymbolError(
                        f"unknown function {val!r} at position {pos}; "
                        f"known functions: {', '.join(FUNCTIONS)}"
                    )
                return ("call", val, arg, pos)
            return ("var", val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "op" and val == "-":
            # unary minus takes a whole factor so that ^ binds tighter:
            # -x1^2 means -(x1^2)
            return ("neg", self.factor(), pos)
        raise ParseError(f"unexpected token {val!r}", pos)


def parse(text: str):
    """Parse source text into the tuple AST."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# evaluation


def eval_jet(node, chart: Chart) -> Jet:
    """Evaluate an AST (or source string) to a jet on the chart."""
    if isinstance(node, str):
        node = parse(node)
    tag = node[0]
    if tag == "num":
        return Jet.constant(chart, float(node[1]))
    if tag == "var":
        name = node[1]
        if name not in chart.names:
            raise UnknownSymbolError(
                f"unknown coordinate {name!r} at position {node[2]}; "
                f"chart coordinates: {', '.join(chart.names)}"
            )
        return Jet.coordinate(chart, name)
    if tag == "neg":
        return -eval_jet(node[1], chart)
    if tag == "bin":
        op, lhs, rhs = node[1], eval_jet(node[2], chart), eval_jet(node[3], chart)
        if op == "+":
            return lhs + rhs
        if op == "-":
            return lhs - rhs
        if op == "*":
            return lhs * rhs
        return lhs / rhs
    if tag == "pow":
        return eval_jet(node[1], chart).rational_power(node[2])
    if tag == "call":
        arg = eval_jet(node[2], chart)
        return _apply_function(node[1], arg)
    raise ValueError(f"bad AST node {node!r}")


def _apply_function(name, arg: Jet) -> Jet:
    if name == "exp":
        return arg.exp()
    if name == "log":
        return arg.log()
    if name == "sin":
        return arg.sin()
    if name == "cos":
        return arg.cos()
    if name == "sinh":
        return arg.sinh()
    if name == "cosh":
        return arg.cosh()
    if name == "sqrt":
        return arg.sqrt()
    if name == "abs":
        return arg.absolute()
    raise UnknownSymbolError(f"unknown function {name!r}")


def eval_point(node, values: dict) -> complex:
    """Pointwise numeric evaluation (used by finite-difference oracles and
    solution-bundle replay)."""
    if isinstance(node, str):
        node = parse(node)
    tag = node[0]
    if tag == "num":
        return complex(float(node[1]))
    if tag == "var":
        try:
            return complex(values[node[1]])
        except KeyError:
            raise UnknownSymbolError(f"no value for {node[1]!r}") from None
    if tag == "neg":
        return -eval_point(node[1], values)
    if tag == "bin":
        a = eval_point(node[2], values)
        b = eval_point(node[3], values)
        op = node[1]
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if abs(b) == 0.0:
            raise DomainError("division by zero in pointwise evaluation")
        return a / b
    if tag == "pow":
        base = eval_point(node[1], values)
        p = node[2]
        if p.denominator == 1:
            return base ** int(p)
        if abs(base.imag) > 1e-12 or base.real <= 0:
            raise DomainError(f"fractional power of non-positive value {base}")
        return base.real ** float(p)
    if tag == "call":
        a = eval_point(node[2], values)
        fn = node[1]
        if fn == "sqrt":
            if abs(a.imag) > 1e-12 or a.real <= 0:
                raise DomainError(f"sqrt of non-positive value {a}")
            return cmath.sqrt(a)
        if fn == "log":
            if abs(a.imag) > 1e-12 or a.real <= 0:
                raise DomainError(f"log of non-positive value {a}")
            return cmath.log(a)
        if fn == "abs":
            return abs(a.real) + 0j
        return getattr(cmath, fn)(a)
    raise ValueError(f"bad AST node {node!r}")
