"""
Test-function expressions over x1..xm.

Expressions are parsed by a small recursive-descent parser into sympy
trees, which gives exact partial derivatives of any order and fast
vectorized evaluation through numpy lambdification.

Grammar (lowest precedence first):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := primary (('^' | '**') unary)?
    primary := number | variable | constant | func '(' expr ')' | '(' expr ')'

so '^' binds tighter than unary minus and is right-associative.
"""

import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import sympy

from .exceptions import (
    DimensionMismatch,
    DomainError,
    ExprError,
    ExprSyntaxError,
    UnknownIdentifier,
    VariableOutOfRange,
)

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "log": sympy.log,
    "sqrt": sympy.sqrt,
    "tanh": sympy.tanh,
}

# "E" is how sympy prints Euler's number, so printed trees re-parse.
CONSTANTS = {
    "pi": sympy.pi,
    "e": sympy.E,
    "E": sympy.E,
}

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)
_VARIABLE_RE = re.compile(r"x(\d+)$")
_UNDEFINED = (sympy.zoo, sympy.nan, sympy.oo, -sympy.oo)


class _Token(NamedTuple):
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append(_Token(kind, match.group(kind), _byte_offset(text, start)))
        pos = match.end()
    tokens.append(_Token("end", "", len(text.encode("utf-8"))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


@lru_cache(maxsize=None)
def symbols(dim: int) -> tuple:
    """The sympy symbols x1..xm."""
    return tuple(sympy.Symbol(f"x{i + 1}", real=True) for i in range(dim))


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.index = 0
        self.dim = dim
        self.symbols = symbols(dim)

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, text: str) -> _Token:
        token = self.peek()
        if token.text != text or token.kind == "end":
            found = "end of input" if token.kind == "end" else repr(token.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", token.offset)
        return self.advance()

    def parse(self):
        tree = self.expression()
        token = self.peek()
        if token.kind != "end":
            raise ExprSyntaxError(f"unexpected {token.text!r}", token.offset)
        return tree

    def expression(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            op = self.advance().text
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        token = self.peek()
        if token.kind == "op" and token.text == "-":
            self.advance()
            return -self.unary()
        if token.kind == "op" and token.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        token = self.peek()
        if token.kind == "op" and token.text in ("^", "**"):
            self.advance()
            return base ** self.unary()
        return base

    def primary(self):
        token = self.advance()
        if token.kind == "number":
            value = Fraction(token.text)
            return sympy.Rational(value.numerator, value.denominator)
        if token.kind == "name":
            return self.identifier(token)
        if token.kind == "op" and token.text == "(":
            node = self.expression()
            self.expect(")")
            return node
        found = "end of input" if token.kind == "end" else repr(token.text)
        raise ExprSyntaxError(f"expected an operand, found {found}", token.offset)

    def identifier(self, token: _Token):
        name = token.text
        if name in FUNCTIONS:
            self.expect("(")
            argument = self.expression()
            self.expect(")")
            return FUNCTIONS[name](argument)
        if name in CONSTANTS:
            return CONSTANTS[name]
        match = _VARIABLE_RE.match(name)
        if match:
            index = int(match.group(1))
            if not 1 <= index <= self.dim:
                raise VariableOutOfRange(
                    f"variable {name} at offset {token.offset} is outside x1..x{self.dim}"
                )
            return self.symbols[index - 1]
        raise UnknownIdentifier(f"unknown identifier {name!r} at offset {token.offset}")


@lru_cache(maxsize=2048)
def _compile(tree, dim: int):
    return sympy.lambdify(symbols(dim), tree, modules="numpy")


@lru_cache(maxsize=4096)
def _partial(tree, dim: int, indices: tuple):
    syms = symbols(dim)
    result = tree
    for index in indices:
        result = sympy.diff(result, syms[index])
    return result


@dataclass(frozen=True)
class Expr:
    """
    An immutable expression f(x1, ..., xm).

    Attributes:
        tree: sympy expression in the symbols x1..xm
        dim: Number of variables m
    """
    tree: sympy.Expr
    dim: int

    def __str__(self) -> str:
        return str(self.tree)

    @property
    def is_zero(self) -> bool:
        return self.tree == 0

    def __call__(self, x) -> float:
        return self.eval(x)

    def eval(self, x) -> float:
        """Evaluate at a single point x of length m."""
        point = np.asarray(x, dtype=float).reshape(-1)
        if point.shape[0] != self.dim:
            raise DimensionMismatch(f"{self} takes {self.dim} coordinates, got {point.shape[0]}")
        return float(self.evaluate(point[None, :])[0])

    def evaluate(self, points) -> np.ndarray:
        """
        Evaluate at every row of an (n, m) array.

        Raises:
            DomainError: The expression is undefined or non-finite at some row
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise DimensionMismatch(f"{self} expects an (n, {self.dim}) array, got {pts.shape}")
        if self.tree.has(*_UNDEFINED):
            raise DomainError(f"{self} is undefined")
        function = _compile(self.tree, self.dim)
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                values = function(*(pts[:, j] for j in range(self.dim)))
        except (FloatingPointError, ZeroDivisionError, ValueError, OverflowError) as exc:
            raise DomainError(f"{self} cannot be evaluated: {exc}") from exc
        values = np.broadcast_to(np.asarray(values, dtype=float), (pts.shape[0],)).copy()
        if not np.all(np.isfinite(values)):
            raise DomainError(f"{self} is not finite at some point")
        return values

    def derivative(self, var: int) -> "Expr":
        """d/dx_{var+1}; var is a 0-based index."""
        return self.partial(var)

    def partial(self, *indices: int) -> "Expr":
        """Mixed partial derivative over 0-based variable indices, cached."""
        for index in indices:
            if not 0 <= index < self.dim:
                raise VariableOutOfRange(f"variable index {index} outside 0..{self.dim - 1}")
        return Expr(_partial(self.tree, self.dim, tuple(indices)), self.dim)

    def gradient(self) -> list:
        return [self.partial(j) for j in range(self.dim)]

    def hessian(self) -> list:
        return [[self.partial(j, k) for k in range(self.dim)] for j in range(self.dim)]


def parse(text: str, m: int) -> Expr:
    """
    Parse expression text over x1..xm.

    Args:
        text: Source such as "sin(pi*x1)*x2"
        m: Number of variables

    Raises:
        ExprSyntaxError: Malformed text, with the byte offset of the problem
        UnknownIdentifier: A name that is not a variable, constant or function
        VariableOutOfRange: x<k> with k outside 1..m
    """
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise ExprError(f"number of variables must be a positive integer, got {m!r}")
    if not isinstance(text, str):
        raise ExprError(f"expression must be a string, got {type(text).__name__}")
    tree = _Parser(text, int(m)).parse()
    logger.debug("parsed %r as %s", text, tree)
    return Expr(sympy.sympify(tree), int(m))


def zero(m: int) -> Expr:
    """The zero expression, used for the canonical (unperturbed) metric."""
    return Expr(sympy.Integer(0), m)


def parse_optional(text, m: int) -> Expr:
    """Like parse(), but empty or missing text means the zero expression."""
    if text is None or (isinstance(text, str) and not text.strip()):
        return zero(m)
    return parse(text, m)
