"""Recursive-descent parser for the polynomial text format.

Grammar (whitespace, including newlines, is insignificant)::

    poly := ["+" | "-"] term (("+" | "-") term)*
    term := number? ("*"? var ("^" int)?)*

Variables are ``x1 .. xn`` by default, or any identifiers listed in
``names``. Example: ``3*x1^2*x2 - 0.5*x2^4 + 1``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .poly import Polynomial

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*^])
    """,
    re.VERBOSE,
)
_DEFAULT_VAR = re.compile(r"x(\d+)$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            chunk = m.group()
            nl = chunk.count("\n")
            if nl:
                line += nl
                line_start = pos + chunk.rindex("\n") + 1
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, nvars: int | None, names: Sequence[str] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.names = list(names) if names is not None else None
        self.nvars = len(self.names) if self.names is not None else nvars
        # parsed terms as (coeff, {var index: exponent})
        self.terms: list[tuple[float, dict[int, int], _Tok]] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def var_index(self, tok: _Tok) -> int:
        if self.names is not None:
            try:
                return self.names.index(tok.text)
            except ValueError:
                raise self.error(f"unknown variable {tok.text!r}", tok) from None
        m = _DEFAULT_VAR.match(tok.text)
        if m is None or int(m.group(1)) < 1:
            raise self.error(f"unknown variable {tok.text!r} (expected x1, x2, ...)", tok)
        idx = int(m.group(1)) - 1
        if self.nvars is not None and idx >= self.nvars:
            raise self.error(f"variable {tok.text!r} exceeds {self.nvars} indeterminates", tok)
        return idx

    def parse(self) -> None:
        sign = 1.0
        if self.tok.kind == "op" and self.tok.text in "+-":
            sign = -1.0 if self.take().text == "-" else 1.0
        self.term(sign)
        while self.tok.kind == "op" and self.tok.text in "+-":
            sign = -1.0 if self.take().text == "-" else 1.0
            self.term(sign)
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")

    def term(self, sign: float) -> None:
        start = self.tok
        coeff = sign
        powers: dict[int, int] = {}
        seen = False
        if self.tok.kind == "number":
            coeff *= float(self.take().text)
            seen = True
        while True:
            if self.tok.kind == "op" and self.tok.text == "*":
                if not seen:
                    raise self.error("expected a number or variable before '*'")
                star = self.take()
                if self.tok.kind != "name":
                    raise self.error("expected a variable after '*'", star if self.tok.kind == "eof" else None)
            elif self.tok.kind != "name":
                break
            vt = self.take()
            idx = self.var_index(vt)
            k = 1
            if self.tok.kind == "op" and self.tok.text == "^":
                self.take()
                if self.tok.kind != "number" or not self.tok.text.isdigit():
                    raise self.error("expected a nonnegative integer exponent")
                k = int(self.take().text)
            powers[idx] = powers.get(idx, 0) + k
            seen = True
        if not seen:
            raise self.error("expected a number or variable")
        self.terms.append((coeff, powers, start))


def parse_polynomial(text: str, nvars: int | None = None,
                     names: Sequence[str] | None = None) -> Polynomial:
    """Parse ``text`` into a :class:`Polynomial`.

    Without ``names`` and ``nvars`` the ring size is the largest ``x<i>``
    index that appears (at least one).
    """
    p = _Parser(text, nvars, names)
    p.parse()
    n = p.nvars
    if n is None:
        n = max([max(pw, default=-1) for _, pw, _ in p.terms] + [0]) + 1
    terms: dict[tuple[int, ...], float] = {}
    for coeff, powers, _ in p.terms:
        alpha = [0] * n
        for idx, k in powers.items():
            alpha[idx] += k
        key = tuple(alpha)
        terms[key] = terms.get(key, 0.0) + coeff
    return Polynomial(n, terms)
