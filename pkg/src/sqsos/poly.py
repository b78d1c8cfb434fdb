"""Sparse multivariate polynomials over the reals.

A polynomial is a map from exponent tuples (multi-indices) to float
coefficients. Values are immutable; every arithmetic result is returned in
canonical form (no stored coefficient with magnitude below ``ZERO_TOL``).

Monomials are ordered graded-lexicographically: total degree first, then
lexicographically with ``x1 > x2 > ... > xn``. Within one degree the larger
monomial comes first, so ``monomials_up_to(2, 1)`` is ``[1, x1, x2]``.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-14

MultiIndex = tuple[int, ...]


def grlex_key(alpha: MultiIndex) -> tuple:
    """Sort key realising the graded lexicographic order."""
    return (sum(alpha), tuple(-a for a in alpha))


def monomials_between(n: int, lo: int, hi: int) -> list[MultiIndex]:
    """All multi-indices in ``n`` variables with ``lo <= |alpha| <= hi``."""
    if n < 1:
        raise ValueError("need at least one indeterminate")
    if lo < 0 or hi < lo:
        return []
    out: list[MultiIndex] = []
    for d in range(lo, hi + 1):
        layer = []
        for combo in combinations_with_replacement(range(n), d):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            layer.append(tuple(alpha))
        layer.sort(key=grlex_key)
        out.extend(layer)
    return out


def monomials_up_to(n: int, d: int) -> list[MultiIndex]:
    """All multi-indices with total degree at most ``d``, in graded-lex order.

    The result has ``comb(n + d, d)`` entries.
    """
    if d < 0:
        raise ValueError("degree must be nonnegative")
    out = monomials_between(n, 0, d)
    assert len(out) == comb(n + d, d)
    return out


def _canonical(terms: Mapping[MultiIndex, float]) -> dict[MultiIndex, float]:
    return {a: float(c) for a, c in terms.items() if abs(c) >= ZERO_TOL}


class Polynomial:
    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[MultiIndex, float] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        self.nvars = int(nvars)
        clean = _canonical(terms or {})
        for alpha in clean:
            if len(alpha) != nvars:
                raise ValueError(f"multi-index {alpha} does not have length {nvars}")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
        self._terms = clean
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Polynomial":
        alpha = [0] * nvars
        alpha[i] = 1
        return cls(nvars, {tuple(alpha): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> "Polynomial":
        alpha = tuple(int(a) for a in alpha)
        return cls(len(alpha), {alpha: c})

    @classmethod
    def from_coefficients(cls, basis: Sequence[MultiIndex], coeffs) -> "Polynomial":
        if len(basis) == 0:
            raise ValueError("empty basis")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (len(basis),):
            raise ValueError("coefficient vector does not match basis length")
        terms: dict[MultiIndex, float] = {}
        for alpha, c in zip(basis, coeffs):
            terms[alpha] = terms.get(alpha, 0.0) + c
        return cls(len(basis[0]), terms)

    # -- inspection -------------------------------------------------------
    @property
    def terms(self) -> Mapping[MultiIndex, float]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[MultiIndex, float]]:
        return iter(sorted(self._terms.items(), key=lambda t: grlex_key(t[0])))

    def coefficient(self, alpha: MultiIndex) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def support(self) -> list[MultiIndex]:
        return sorted(self._terms, key=grlex_key)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def degree(self) -> int:
        """Maximum total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(sum(a) for a in self._terms)

    @property
    def min_degree(self) -> int:
        if not self._terms:
            return -1
        return min(sum(a) for a in self._terms)

    def coefficients(self, basis: Sequence[MultiIndex], strict: bool = True) -> np.ndarray:
        """Dense coefficient vector against ``basis``.

        With ``strict`` a term outside the basis raises ``ValueError``.
        """
        index = {a: k for k, a in enumerate(basis)}
        out = np.zeros(len(basis))
        for alpha, c in self._terms.items():
            k = index.get(alpha)
            if k is None:
                if strict:
                    raise ValueError(f"monomial {alpha} not in basis")
                continue
            out[k] = c
        return out

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Polynomial") -> None:
        if not isinstance(other, Polynomial):
            raise TypeError(f"expected Polynomial, got {type(other).__name__}")
        if other.nvars != self.nvars:
            raise ValueError(f"dimension mismatch: {self.nvars} vs {other.nvars} indeterminates")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        self._check(other)
        return other

    def __add__(self, other) -> "Polynomial":
        other = self._lift(other)
        out = dict(self._terms)
        for a, c in other._terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._lift(other) - self

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {a: c * float(other) for a, c in self._terms.items()})
        self._check(other)
        out: dict[MultiIndex, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                out[key] = out.get(key, 0.0) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Polynomial":
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "Polynomial":
        if int(k) != k or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-10) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coefficient(a) - other.coefficient(a)) <= atol for a in keys)

    # -- calculus ---------------------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        out: dict[MultiIndex, float] = {}
        for a, c in self._terms.items():
            if a[i] == 0:
                continue
            b = list(a)
            b[i] -= 1
            key = tuple(b)
            out[key] = out.get(key, 0.0) + c * a[i]
        return Polynomial(self.nvars, out)

    def gradient(self) -> "PolyVec":
        return PolyVec([self.diff(i) for i in range(self.nvars)], nvars=self.nvars)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, point) -> float:
        point = np.asarray(point, dtype=float).ravel()
        if point.shape[0] != self.nvars:
            raise ValueError(f"point has {point.shape[0]} entries, expected {self.nvars}")
        total = 0.0
        for a, c in self._terms.items():
            term = c
            for xi, ai in zip(point, a):
                if ai:
                    term *= xi**ai
            total += term
        return float(total)

    def __call__(self, point) -> float:
        return self.evaluate(point)

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at each row of an ``(m, nvars)`` array."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.nvars:
            raise ValueError(f"expected an (m, {self.nvars}) array")
        if not self._terms:
            return np.zeros(pts.shape[0])
        exps = np.array(list(self._terms.keys()), dtype=float)
        coeffs = np.array(list(self._terms.values()))
        if self.nvars == 0:
            return np.full(pts.shape[0], coeffs.sum())
        # (m, terms) monomial values, products over variables
        mono = np.ones((pts.shape[0], exps.shape[0]))
        for j in range(self.nvars):
            col = exps[:, j]
            if np.any(col):
                mono *= pts[:, j : j + 1] ** col[None, :]
        return mono @ coeffs

    def compose(self, values: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``x_i -> values[i]``; all values share one ring."""
        if len(values) != self.nvars:
            raise ValueError("need one substitute per indeterminate")
        if not values:
            raise ValueError("cannot compose a polynomial in zero indeterminates")
        target = values[0].nvars
        powers: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, k: int) -> Polynomial:
            if (i, k) not in powers:
                powers[(i, k)] = values[i] ** k
            return powers[(i, k)]

        result = Polynomial.zero(target)
        for a, c in self._terms.items():
            term = Polynomial.constant(target, c)
            for i, k in enumerate(a):
                if k:
                    term = term * power(i, k)
            result = result + term
        return result

    def l2_norm_sq(self) -> float:
        return float(sum(c * c for c in self._terms.values()))

    # -- text -------------------------------------------------------------
    def to_text(self, names: Sequence[str] | None = None) -> str:
        if names is None:
            names = [f"x{i + 1}" for i in range(self.nvars)]
        if not self._terms:
            return "0"
        parts = []
        for alpha, c in sorted(self._terms.items(), key=lambda t: grlex_key(t[0]), reverse=True):
            factors = []
            for name, k in zip(names, alpha):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            mag = abs(c)
            if not factors:
                body = repr(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = repr(mag) + "*" + "*".join(factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, '{self.to_text()}')"


class PolyVec(Sequence):
    """Nonempty vector of polynomials sharing one set of indeterminates."""

    __slots__ = ("_entries", "nvars")

    def __init__(self, entries: Iterable[Polynomial], nvars: int | None = None):
        entries = tuple(entries)
        if not entries:
            raise ValueError("PolyVec must be nonempty")
        n = entries[0].nvars if nvars is None else nvars
        for p in entries:
            if not isinstance(p, Polynomial):
                raise TypeError("PolyVec entries must be Polynomial")
            if p.nvars != n:
                raise ValueError("PolyVec entries must share nvars")
        self._entries = entries
        self.nvars = n

    def __getitem__(self, i):
        return self._entries[i]

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyVec):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def evaluate(self, point) -> np.ndarray:
        return np.array([p.evaluate(point) for p in self._entries])

    def dot(self, other: "PolyVec") -> Polynomial:
        if len(other) != len(self):
            raise ValueError("length mismatch")
        out = Polynomial.zero(self.nvars)
        for a, b in zip(self._entries, other):
            out = out + a * b
        return out

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self._entries)

    def __repr__(self) -> str:
        return "PolyVec([" + ", ".join(str(p) for p in self._entries) + "])"


# Module-level operations mirror the methods for functional call sites.

def add(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a + b


def mul(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    return a * b


def gradient(p: Polynomial) -> PolyVec:
    return p.gradient()


def evaluate(p: Polynomial, point) -> float:
    return p.evaluate(point)


def l2_norm_sq(p: Polynomial) -> float:
    return p.l2_norm_sq()


def variables(n: int) -> list[Polynomial]:
    """The indeterminates ``x1..xn`` as polynomials."""
    return [Polynomial.variable(n, i) for i in range(n)]
