"""Infix expression grammar and vector-field declarations.

Grammar (loosest to tightest)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' exponent)?          right associative
    exponent := '-' exponent | power
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

``-x^2`` is ``-(x^2)``.  Numbers are integers or decimals (optionally with an
exponent); ``p/q`` is ordinary division and folds to an exact rational.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

from . import expr as E
from .expr import Expr, Symbol, PARAMETER, VARIABLE

__all__ = ["ParseError", "VectorField", "parse_expr", "parse_field"]


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
  | (?P<nl>\n)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str, line0: int = 1) -> list[_Tok]:
    if not text.isascii():
        raise ParseError("only ASCII input is supported", line0, 1)
    toks: list[_Tok] = []
    pos, line, col0 = 0, line0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - col0 + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            col0 = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - col0 + 1))
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - col0 + 1))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok], symbols: Mapping[str, Symbol]):
        self.toks = toks
        self.i = 0
        self.symbols = symbols

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.take()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected token {tok.text!r}", tok.line, tok.col)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            e = E.add(e, rhs) if op == "+" else E.sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/"):
            tok = self.take()
            rhs = self.unary()
            if tok.text == "*":
                e = E.mul(e, rhs)
            else:
                try:
                    e = E.quotient(e, rhs)
                except ZeroDivisionError:
                    raise ParseError("division by constant zero", tok.line, tok.col) from None
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.text == "-":
            self.take()
            return E.neg(self.unary())
        if tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text != "^":
            return base
        tok = self.take()
        exponent = self.exponent()
        return self._raise(base, exponent, tok)

    def exponent(self) -> Expr:
        if self.peek().text == "-":
            self.take()
            return E.neg(self.exponent())
        if self.peek().text == "+":
            self.take()
            return self.exponent()
        return self.power()

    def _raise(self, base: Expr, exponent: Expr, tok: _Tok) -> Expr:
        if not exponent.is_const:
            raise ParseError("exponent must be a constant", tok.line, tok.col)
        v = exponent.value
        if isinstance(v, Fraction) and v.denominator == 1:
            try:
                return E.power(base, int(v))
            except ZeroDivisionError:
                raise ParseError("zero to a negative power", tok.line, tok.col) from None
        if isinstance(v, float) and v.is_integer():
            return E.power(base, int(v))
        if base.is_const:
            b = float(base.value)
            if b < 0:
                raise ParseError("fractional power of a negative constant", tok.line, tok.col)
            return E.const(b ** float(v))
        raise ParseError("non-integer exponent on a symbolic base", tok.line, tok.col)

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            if re.fullmatch(r"\d+", tok.text):
                return E.const(int(tok.text))
            return E.const(Fraction(tok.text))
        if tok.kind == "name":
            if self.peek().text == "(":
                if tok.text not in E.FUNCTIONS:
                    raise ParseError(f"unknown function {tok.text!r}", tok.line, tok.col)
                self.take()
                arg = self.expr()
                self.expect(")")
                return E.func(tok.text, arg)
            s = self.symbols.get(tok.text)
            if s is None:
                raise ParseError(f"undeclared symbol {tok.text!r}", tok.line, tok.col)
            return E.sym(s)
        if tok.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col)


def parse_expr(text: str, symbols: Union[Mapping[str, Symbol], Sequence[Symbol]], line: int = 1) -> Expr:
    """Parse one expression; every name must be in ``symbols``."""
    if not isinstance(symbols, Mapping):
        symbols = {s.name: s for s in symbols}
    return _Parser(_tokenize(text, line), symbols).parse()


@dataclass(frozen=True)
class VectorField:
    """A square system F(x; alpha) with n components over n variables."""

    variables: tuple[Symbol, ...]
    parameters: tuple[Symbol, ...]
    components: tuple[Expr, ...]
    name: str = "field"

    def __post_init__(self):
        n = len(self.variables)
        if n < 1:
            raise ValueError("a vector field needs at least one variable")
        if len(self.components) != n:
            raise ValueError(f"{len(self.components)} components for {n} variables")
        names = [s.name for s in self.variables + self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("symbol names must be unique")
        declared = set(self.variables) | set(self.parameters)
        for c in self.components:
            extra = c.free - declared
            if extra:
                raise ValueError(f"undeclared symbol(s): {sorted(s.name for s in extra)}")

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def p(self) -> int:
        return len(self.parameters)

    @property
    def var_names(self) -> list[str]:
        return [s.name for s in self.variables]

    @property
    def param_names(self) -> list[str]:
        return [s.name for s in self.parameters]

    def symbol(self, name: str) -> Symbol:
        for s in self.variables + self.parameters:
            if s.name == name:
                return s
        raise KeyError(name)

    def var_exprs(self) -> list[Expr]:
        return [E.sym(s) for s in self.variables]

    def with_components(self, components: Sequence[Expr], name: str | None = None) -> "VectorField":
        return VectorField(self.variables, self.parameters, tuple(components), name or self.name)

    def __str__(self):
        comps = ", ".join(E.to_str(c) for c in self.components)
        return f"{self.name}: ({comps})"


def parse_field(
    components: Union[str, Sequence[str]],
    variables: Sequence[str],
    parameters: Sequence[str] = (),
    name: str = "field",
) -> VectorField:
    """Build a :class:`VectorField` from component text.

    ``components`` is either a sequence of expression strings or a single
    string with one component per non-blank line (``;`` also separates).
    Error positions refer to the component's line.
    """
    vs = tuple(Symbol(v, VARIABLE) for v in variables)
    ps = tuple(Symbol(p, PARAMETER) for p in parameters)
    table: dict[str, Symbol] = {}
    for s in vs + ps:
        if s.name in table:
            raise ParseError(f"duplicate declaration of {s.name!r}")
        if s.name in E.FUNCTIONS:
            raise ParseError(f"{s.name!r} is a reserved function name")
        table[s.name] = s
    if isinstance(components, str):
        items = []
        for lineno, raw in enumerate(components.splitlines(), start=1):
            for piece in raw.split(";"):
                if piece.strip():
                    items.append((piece, lineno))
    else:
        items = [(c, i) for i, c in enumerate(components, start=1)]
    exprs = [parse_expr(text, table, line=lineno) for text, lineno in items]
    if len(exprs) != len(vs):
        raise ParseError(f"{len(exprs)} components for {len(vs)} variables", 1, 1)
    return VectorField(vs, ps, tuple(exprs), name)
