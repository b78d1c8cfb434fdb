"""Expression grammar for ``custom`` problem files.

::

    expr  := term (("+" | "-") term)*
    term  := unary ("*" unary)*
    unary := ("+" | "-") unary | power
    power := atom ("^" int)?
    atom  := number | name | name "(" expr ")" | "(" expr ")"

Names are indeterminates, decision variables, or the functions ``lie(e)``
(derivative of ``e`` along the problem dynamics) and ``sqnorm(e)`` (squared
coefficient norm, objective root only).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..expr import DecisionVar, ExprError, ExprNode, const, grad_dot, sqnorm_diff
from ..poly import Polynomial
from ..polyparse import ParseError

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*^()])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    out, pos, line, start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - start + 1)
        if m.lastgroup == "ws":
            chunk = m.group()
            if "\n" in chunk:
                line += chunk.count("\n")
                start = pos + chunk.rindex("\n") + 1
        else:
            out.append(_Tok(m.lastgroup, m.group(), line, pos - start + 1))
        pos = m.end()
    out.append(_Tok("eof", "", line, pos - start + 1))
    return out


class _Parser:
    def __init__(self, text: str, indeterminates: Sequence[str],
                 decisions: Mapping[str, DecisionVar], dynamics: Sequence[Polynomial] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.names = list(indeterminates)
        self.n = len(self.names)
        self.decisions = decisions
        self.dynamics = dynamics
        self.depth = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            raise self.error(f"expected {text!r}")
        return self.take()

    def constant(self, c: float) -> ExprNode:
        return const(Polynomial.constant(self.n, c))

    def root(self) -> ExprNode:
        t = self.tok
        if t.kind == "name" and t.text == "sqnorm":
            self.take()
            self.expect("(")
            e = self.expr()
            self.expect(")")
            out = sqnorm_diff(e, self.constant(0.0))
        else:
            out = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return out

    def expr(self) -> ExprNode:
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.take().text
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> ExprNode:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text == "*":
            op = self.take()
            rhs = self.unary()
            try:
                e = e * rhs
            except ExprError as exc:
                raise self.error(str(exc), op) from None
        return e

    def unary(self) -> ExprNode:
        if self.tok.kind == "op" and self.tok.text in "+-":
            sign = self.take().text
            e = self.unary()
            return -e if sign == "-" else e
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            op = self.take()
            if self.tok.kind != "number" or not self.tok.text.isdigit():
                raise self.error("expected a nonnegative integer exponent")
            k = int(self.take().text)
            if base.kind == "const":
                return const(base.data**k)
            if k == 0:
                return self.constant(1.0)
            out = base
            try:
                for _ in range(k - 1):
                    out = out * base
            except ExprError as exc:
                raise self.error(str(exc), op) from None
            return out
        return base

    def atom(self) -> ExprNode:
        t = self.tok
        if t.kind == "number":
            self.take()
            return self.constant(float(t.text))
        if t.kind == "op" and t.text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            self.take()
            if self.tok.text == "(" and self.tok.kind == "op":
                return self.call(t)
            if t.text in self.decisions:
                return self.decisions[t.text].ref()
            if t.text in self.names:
                return const(Polynomial.variable(self.n, self.names.index(t.text)))
            raise self.error(f"unknown name {t.text!r}", t)
        raise self.error("expected a number, name or '('")

    def call(self, name: _Tok) -> ExprNode:
        self.take()
        arg = self.expr()
        self.expect(")")
        if name.text == "lie":
            if self.dynamics is None:
                raise self.error("lie() needs problem dynamics", name)
            try:
                return grad_dot(arg, self.dynamics)
            except ExprError as exc:
                raise self.error(str(exc), name) from None
        if name.text == "sqnorm":
            raise self.error("sqnorm() is only allowed as the whole objective", name)
        raise self.error(f"unknown function {name.text!r}", name)


def parse_expression(text: str, indeterminates: Sequence[str], decisions: Mapping[str, DecisionVar],
                     dynamics: Sequence[Polynomial] | None = None) -> ExprNode:
    try:
        return _Parser(text, indeterminates, decisions, dynamics).root()
    except ExprError as exc:
        raise ParseError(str(exc), 1, 1) from None
