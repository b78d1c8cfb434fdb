"""Expression graphs over polynomial-valued decision variables.

Decision variables are polynomials with unknown coefficients over a fixed
monomial basis. Expressions combine them with sums, products, Lie
derivatives along (possibly decision-dependent) vector fields and a squared
coefficient-norm objective. Products are limited to second order in the
decision coefficients, which covers every bilinear S-procedure shape.

Each expression compiles to a :class:`QuadForm`, a polynomial-valued
quadratic function of the stacked coefficient vector ``z``. Materialised
against a row basis it gives exact values, Jacobians and curvature.
:func:`eval_expr` walks the graph directly on polynomials and serves as an
independent check of the compiled path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .poly import MultiIndex, Polynomial, PolyVec, grlex_key, monomials_between

FREE = "free"
SOS = "sos"
SCALAR = "scalar"
ROLES = (FREE, SOS, SCALAR)


class ExprError(ValueError):
    pass


class OrderError(ExprError):
    """A product would be more than quadratic in the decision coefficients."""


@dataclass(frozen=True, eq=False)
class DecisionVar:
    name: str
    nvars: int
    basis: tuple[MultiIndex, ...]
    role: str = FREE

    def __post_init__(self):
        basis = tuple(tuple(int(a) for a in alpha) for alpha in self.basis)
        object.__setattr__(self, "basis", basis)
        if self.role not in ROLES:
            raise ExprError(f"unknown role {self.role!r}")
        if not basis:
            raise ExprError(f"{self.name}: empty basis")
        if len(set(basis)) != len(basis):
            raise ExprError(f"{self.name}: duplicate monomials in basis")
        if any(len(a) != self.nvars for a in basis):
            raise ExprError(f"{self.name}: basis length does not match nvars={self.nvars}")
        is_const = basis == ((0,) * self.nvars,)
        if (self.role == SCALAR) != is_const:
            raise ExprError(f"{self.name}: scalar role requires the constant basis and vice versa")

    @classmethod
    def scalar(cls, name: str, nvars: int = 1) -> "DecisionVar":
        return cls(name, nvars, ((0,) * nvars,), SCALAR)

    @classmethod
    def polynomial(cls, name: str, nvars: int, lo: int, hi: int) -> "DecisionVar":
        return cls(name, nvars, tuple(monomials_between(nvars, lo, hi)), FREE)

    @classmethod
    def sos(cls, name: str, nvars: int, lo: int, hi: int) -> "DecisionVar":
        """SOS multiplier with terms of degree ``lo..hi`` (both even)."""
        if lo % 2 or hi % 2:
            raise ExprError(f"{name}: SOS multiplier degrees must be even")
        return cls(name, nvars, tuple(monomials_between(nvars, lo, hi)), SOS)

    def __len__(self) -> int:
        return len(self.basis)

    def __repr__(self) -> str:
        return f"DecisionVar({self.name!r}, role={self.role}, size={len(self.basis)})"

    def polynomial_of(self, coeffs) -> Polynomial:
        return Polynomial.from_coefficients(self.basis, coeffs)

    def ref(self) -> "ExprNode":
        return ExprNode("var", (), self.nvars, data=self)


# -- expression nodes --------------------------------------------------------------

KINDS = ("const", "var", "add", "scale", "mul", "grad_dot", "subs_dyn", "sqnorm_diff")


class ExprNode:
    __slots__ = ("kind", "children", "nvars", "data", "order")

    def __init__(self, kind: str, children: tuple, nvars: int, data=None):
        if kind not in KINDS:
            raise ExprError(f"unknown node kind {kind!r}")
        for c in children:
            if c.nvars != nvars:
                raise ExprError(f"indeterminate count mismatch: {c.nvars} vs {nvars}")
            if c.kind == "sqnorm_diff":
                raise ExprError("a squared-norm objective can only be the root")
        self.kind = kind
        self.children = tuple(children)
        self.nvars = nvars
        self.data = data
        self.order = self._order()

    def _order(self) -> int:
        k, ch = self.kind, self.children
        if k == "const":
            return 0
        if k == "var":
            return 1
        if k in ("add", "scale"):
            return max(c.order for c in ch)
        if k in ("mul", "grad_dot", "subs_dyn"):
            o = sum(c.order for c in ch) if k != "subs_dyn" else ch[0].order + max(
                (c.order for c in ch[1:]), default=0)
            if o > 2:
                raise OrderError(
                    f"{k} node would be of order {o} in the decision coefficients; at most 2 is supported")
            return o
        inner = max(c.order for c in ch)
        if inner > 1:
            raise OrderError("squared-norm objective needs arguments affine in the decisions")
        return 2 * inner

    # -- construction sugar ---------------------------------------------------
    def _lift(self, other) -> "ExprNode":
        if isinstance(other, ExprNode):
            return other
        if isinstance(other, DecisionVar):
            return other.ref()
        if isinstance(other, Polynomial):
            return const(other)
        if isinstance(other, (int, float, np.floating, np.integer)):
            return const(Polynomial.constant(self.nvars, float(other)))
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return ExprNode("add", (self, other), self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + other.scaled(-1.0)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + self.scaled(-1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer, Polynomial)):
            return self.scaled(other)
        other = self._lift(other)
        if other is NotImplemented:
            return other
        if other.kind == "const":
            return self.scaled(other.data)
        if self.kind == "const":
            return other.scaled(self.data)
        return ExprNode("mul", (self, other), self.nvars)

    __rmul__ = __mul__

    def scaled(self, factor) -> "ExprNode":
        """Multiply by a fixed number or polynomial."""
        if isinstance(factor, Polynomial):
            if factor.nvars != self.nvars:
                raise ExprError("indeterminate count mismatch in scale")
        else:
            factor = float(factor)
        return ExprNode("scale", (self,), self.nvars, data=factor)

    def variables(self) -> list[DecisionVar]:
        return collect_vars([self])

    def __repr__(self) -> str:
        if self.kind == "var":
            return self.data.name
        if self.kind == "const":
            return f"({self.data})"
        return f"{self.kind}({', '.join(map(repr, self.children))})"


def const(p: Polynomial) -> ExprNode:
    return ExprNode("const", (), p.nvars, data=p)


def var(v: DecisionVar) -> ExprNode:
    return v.ref()


def grad_dot(e: ExprNode, field_: Sequence[Polynomial]) -> ExprNode:
    """Lie derivative ``<grad e, f>`` along a fixed polynomial vector field."""
    f = PolyVec(field_)
    if len(f) != e.nvars or f.nvars != e.nvars:
        raise ExprError(f"vector field must have {e.nvars} entries in {e.nvars} indeterminates")
    return ExprNode("grad_dot", (e,), e.nvars, data=f)


def substitute_dynamics(e: ExprNode, drift: Sequence[Polynomial],
                        inputs: Sequence[Sequence[Polynomial]],
                        controls: Sequence[ExprNode]) -> ExprNode:
    """Lie derivative along ``drift + sum_j inputs[j] * controls[j]``.

    ``inputs[j]`` is the input column multiplying control ``j``; controls may
    be decision-dependent (a feedback law under synthesis).
    """
    f0 = PolyVec(drift)
    cols = [PolyVec(g) for g in inputs]
    if len(cols) != len(controls):
        raise ExprError("one input column per control expression")
    for v in [f0, *cols]:
        if len(v) != e.nvars or v.nvars != e.nvars:
            raise ExprError(f"vector fields must have {e.nvars} entries in {e.nvars} indeterminates")
    return ExprNode("subs_dyn", (e, *controls), e.nvars, data=(f0, tuple(cols)))


def sqnorm_diff(a: ExprNode, b) -> ExprNode:
    """Squared coefficient l2-norm ``||a - b||^2`` (objective root only)."""
    if not isinstance(b, ExprNode):
        b = a._lift(b)
    return ExprNode("sqnorm_diff", (a, b), a.nvars)


def collect_vars(roots: Iterable[ExprNode]) -> list[DecisionVar]:
    """Decision variables in order of first appearance (depth-first)."""
    seen: dict[int, DecisionVar] = {}
    names: dict[str, DecisionVar] = {}

    def walk(node):
        if node.kind == "var":
            v = node.data
            if id(v) not in seen:
                other = names.get(v.name)
                if other is not None and other is not v:
                    raise ExprError(f"two distinct decision variables named {v.name!r}")
                seen[id(v)] = v
                names[v.name] = v
        for c in node.children:
            walk(c)

    for r in roots:
        walk(r)
    return list(seen.values())


# -- assignments and layouts -----------------------------------------------------

class CoeffAssignment(dict):
    """Map from :class:`DecisionVar` to a coefficient vector over its basis."""

    def __init__(self, values: Mapping[DecisionVar, object] | None = None):
        super().__init__()
        for v, c in (values or {}).items():
            self[v] = c

    def __setitem__(self, v: DecisionVar, coeffs) -> None:
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        if c.shape != (len(v.basis),):
            raise ExprError(f"{v.name}: expected {len(v.basis)} coefficients, got {c.shape[0]}")
        super().__setitem__(v, c)

    def __hash__(self):
        return id(self)

    def polynomial(self, v: DecisionVar) -> Polynomial:
        if v not in self:
            raise ExprError(f"decision variable {v.name!r} is unassigned")
        return v.polynomial_of(self[v])

    @classmethod
    def from_polynomials(cls, values: Mapping[DecisionVar, Polynomial]) -> "CoeffAssignment":
        out = cls()
        for v, p in values.items():
            try:
                out[v] = p.coefficients(v.basis)
            except ValueError as exc:
                raise ExprError(f"{v.name}: {exc}") from None
        return out


class VarLayout:
    """Stacking order of decision coefficients into one vector ``z``."""

    def __init__(self, variables: Sequence[DecisionVar]):
        self.variables = list(variables)
        self.offsets: dict[DecisionVar, int] = {}
        off = 0
        for v in self.variables:
            if v in self.offsets:
                raise ExprError(f"duplicate variable {v.name!r} in layout")
            self.offsets[v] = off
            off += len(v.basis)
        self.size = off

    def slice(self, v: DecisionVar) -> slice:
        o = self.offsets[v]
        return slice(o, o + len(v.basis))

    def stack(self, a: Mapping[DecisionVar, np.ndarray]) -> np.ndarray:
        z = np.zeros(self.size)
        for v in self.variables:
            if v not in a:
                raise ExprError(f"decision variable {v.name!r} is unassigned")
            z[self.slice(v)] = a[v]
        return z

    def unstack(self, z: np.ndarray) -> CoeffAssignment:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ExprError(f"expected a vector of length {self.size}")
        return CoeffAssignment({v: z[self.slice(v)].copy() for v in self.variables})

    def labels(self) -> list[str]:
        return [f"{v.name}[{k}]" for v in self.variables for k in range(len(v.basis))]


# -- direct evaluation -----------------------------------------------------------

def eval_expr(e: ExprNode, a: Mapping[DecisionVar, np.ndarray]):
    """Value of ``e`` at the assignment: a polynomial, or a float at a norm root."""
    if e.kind == "sqnorm_diff":
        return (_eval(e.children[0], a) - _eval(e.children[1], a)).l2_norm_sq()
    return _eval(e, a)


def _eval(e: ExprNode, a) -> Polynomial:
    k = e.kind
    if k == "const":
        return e.data
    if k == "var":
        v = e.data
        if v not in a:
            raise ExprError(f"decision variable {v.name!r} is unassigned")
        if v.nvars != e.nvars:
            raise ExprError("indeterminate count mismatch")
        return v.polynomial_of(a[v])
    if k == "add":
        return _eval(e.children[0], a) + _eval(e.children[1], a)
    if k == "scale":
        return _eval(e.children[0], a) * e.data
    if k == "mul":
        return _eval(e.children[0], a) * _eval(e.children[1], a)
    if k == "grad_dot":
        return _eval(e.children[0], a).gradient().dot(e.data)
    if k == "subs_dyn":
        f0, cols = e.data
        u = [_eval(c, a) for c in e.children[1:]]
        fld = [f0[i] + sum((cols[j][i] * u[j] for j in range(len(u))), Polynomial.zero(e.nvars))
               for i in range(e.nvars)]
        return _eval(e.children[0], a).gradient().dot(PolyVec(fld))
    raise ExprError(f"cannot evaluate {k} below the root")


# -- compilation -------------------------------------------------------------------

def _padd(d: dict, key, p: Polynomial) -> None:
    q = d.get(key)
    q = p if q is None else q + p
    if q.is_zero():
        d.pop(key, None)
    else:
        d[key] = q


@dataclass
class QuadForm:
    """``const + sum_i lin[i] z_i + sum_{i<=j} quad[i,j] z_i z_j`` with polynomial weights."""
    nvars: int
    const: Polynomial
    lin: dict = field(default_factory=dict)
    quad: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return 2 if self.quad else (1 if self.lin else 0)

    def __add__(self, other: "QuadForm") -> "QuadForm":
        lin = dict(self.lin)
        quad = dict(self.quad)
        for i, p in other.lin.items():
            _padd(lin, i, p)
        for ij, p in other.quad.items():
            _padd(quad, ij, p)
        return QuadForm(self.nvars, self.const + other.const, lin, quad)

    def scale(self, c) -> "QuadForm":
        lin, quad = {}, {}
        for i, p in self.lin.items():
            _padd(lin, i, p * c)
        for ij, p in self.quad.items():
            _padd(quad, ij, p * c)
        return QuadForm(self.nvars, self.const * c, lin, quad)

    def __mul__(self, other: "QuadForm") -> "QuadForm":
        if self.order + other.order > 2:
            raise OrderError("product is more than quadratic in the decision coefficients")
        out = other.scale(self.const)
        out = out + QuadForm(self.nvars, Polynomial.zero(self.nvars),
                             {i: p * other.const for i, p in self.lin.items()},
                             {ij: p * other.const for ij, p in self.quad.items()})
        quad = dict(out.quad)
        for i, p in self.lin.items():
            for j, q in other.lin.items():
                _padd(quad, (min(i, j), max(i, j)), p * q)
        lin = {i: p for i, p in out.lin.items() if not p.is_zero()}
        return QuadForm(self.nvars, out.const, lin, quad)

    def diff(self, i: int) -> "QuadForm":
        """Partial derivative in the indeterminate ``x_i``."""
        lin, quad = {}, {}
        for k, p in self.lin.items():
            _padd(lin, k, p.diff(i))
        for kl, p in self.quad.items():
            _padd(quad, kl, p.diff(i))
        return QuadForm(self.nvars, self.const.diff(i), lin, quad)

    def support(self) -> set[MultiIndex]:
        out = set(self.const.terms)
        for p in self.lin.values():
            out.update(p.terms)
        for p in self.quad.values():
            out.update(p.terms)
        return out

    def materialize(self, rows: Sequence[MultiIndex] | None = None) -> "Compiled":
        if rows is None:
            rows = sorted(self.support(), key=grlex_key) or [(0,) * self.nvars]
        return Compiled.build(self, tuple(rows))


def _lie(qf: QuadForm, fld: Sequence[QuadForm]) -> QuadForm:
    out = QuadForm(qf.nvars, Polynomial.zero(qf.nvars))
    for i, fi in enumerate(fld):
        out = out + qf.diff(i) * fi
    return out


def compile_expr(e: ExprNode, layout: VarLayout) -> QuadForm:
    cache: dict[int, QuadForm] = {}

    def go(node: ExprNode) -> QuadForm:
        key = id(node)
        if key in cache:
            return cache[key]
        n = node.nvars
        zero = Polynomial.zero(n)
        k = node.kind
        if k == "const":
            out = QuadForm(n, node.data)
        elif k == "var":
            v = node.data
            if v not in layout.offsets:
                raise ExprError(f"decision variable {v.name!r} is not in the layout")
            o = layout.offsets[v]
            out = QuadForm(n, zero, {o + j: Polynomial.monomial(alpha) for j, alpha in enumerate(v.basis)})
        elif k == "add":
            out = go(node.children[0]) + go(node.children[1])
        elif k == "scale":
            out = go(node.children[0]).scale(node.data)
        elif k == "mul":
            out = go(node.children[0]) * go(node.children[1])
        elif k == "grad_dot":
            out = _lie(go(node.children[0]), [QuadForm(n, fi) for fi in node.data])
        elif k == "subs_dyn":
            f0, cols = node.data
            us = [go(c) for c in node.children[1:]]
            fld = []
            for i in range(n):
                fi = QuadForm(n, f0[i])
                for col, u in zip(cols, us):
                    fi = fi + u.scale(col[i])
                fld.append(fi)
            out = _lie(go(node.children[0]), fld)
        else:
            raise ExprError("a squared-norm objective can only be the root")
        cache[key] = out
        return out

    return go(e)


@dataclass
class Compiled:
    """A :class:`QuadForm` as arrays against a fixed row basis.

    ``value(z) = c0 + A z + sum_t qc[t] z[qi[t]] z[qj[t]]`` row-wise at ``qr[t]``.
    """
    rows: tuple[MultiIndex, ...]
    c0: np.ndarray
    A: sp.csr_matrix
    qr: np.ndarray
    qi: np.ndarray
    qj: np.ndarray
    qc: np.ndarray
    nz: int

    @classmethod
    def build(cls, qf: QuadForm, rows: tuple[MultiIndex, ...]) -> "Compiled":
        idx = {a: k for k, a in enumerate(rows)}
        nz = 1 + max([i for i in qf.lin] + [j for _, j in qf.quad] + [-1])

        def place(p: Polynomial):
            for alpha, c in p.terms.items():
                r = idx.get(alpha)
                if r is None:
                    raise ExprError(f"monomial {alpha} falls outside the constraint basis")
                yield r, c

        c0 = np.zeros(len(rows))
        for r, c in place(qf.const):
            c0[r] += c
        ar, ac, av = [], [], []
        for i, p in qf.lin.items():
            for r, c in place(p):
                ar.append(r)
                ac.append(i)
                av.append(c)
        qr, qi, qj, qc = [], [], [], []
        for (i, j), p in qf.quad.items():
            for r, c in place(p):
                qr.append(r)
                qi.append(i)
                qj.append(j)
                qc.append(c)
        A = sp.csr_matrix((av, (ar, ac)), shape=(len(rows), nz))
        return cls(rows, c0, A, np.array(qr, dtype=int), np.array(qi, dtype=int),
                   np.array(qj, dtype=int), np.array(qc, dtype=float), nz)

    def with_width(self, n: int) -> "Compiled":
        """Same form acting on a longer stacked vector (extra trailing zeros)."""
        if n < self.nz:
            raise ExprError("layout narrower than the compiled form")
        A = sp.csr_matrix((self.A.data, self.A.indices, self.A.indptr), shape=(len(self.rows), n))
        return Compiled(self.rows, self.c0, A, self.qr, self.qi, self.qj, self.qc, n)

    @property
    def nrows(self) -> int:
        return len(self.rows)

    @property
    def is_affine(self) -> bool:
        return self.qc.size == 0

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = self.c0 + self.A @ z
        if self.qc.size:
            out = out + np.bincount(self.qr, self.qc * z[self.qi] * z[self.qj], minlength=self.nrows)
        return out

    def jacobian(self, z: np.ndarray) -> sp.csr_matrix:
        z = np.asarray(z, dtype=float)
        if not self.qc.size:
            return self.A
        shape = (self.nrows, self.nz)
        J = sp.csr_matrix((self.qc * z[self.qj], (self.qr, self.qi)), shape=shape)
        J = J + sp.csr_matrix((self.qc * z[self.qi], (self.qr, self.qj)), shape=shape)
        return (self.A + J).tocsr()

    def weighted_hessian(self, lam: np.ndarray) -> np.ndarray:
        """Hessian of ``<lam, value(z)>`` (constant in ``z``)."""
        H = np.zeros((self.nz, self.nz))
        if self.qc.size:
            w = self.qc * np.asarray(lam)[self.qr]
            np.add.at(H, (self.qi, self.qj), w)
            np.add.at(H, (self.qj, self.qi), w)
        return H

    def polynomial(self, z: np.ndarray) -> Polynomial:
        return Polynomial.from_coefficients(self.rows, self.value(z))


@dataclass
class ObjectiveForm:
    """Scalar quadratic ``c0 + b'z + 1/2 z'Hz`` with constant Hessian ``H``."""
    c0: float
    b: np.ndarray
    H: np.ndarray

    def value(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.c0 + self.b @ z + 0.5 * z @ self.H @ z)

    def gradient(self, z) -> np.ndarray:
        return self.b + self.H @ np.asarray(z, dtype=float)

    @cached_property
    def is_linear(self) -> bool:
        return not np.any(self.H)


def compile_objective(e: ExprNode, layout: VarLayout) -> ObjectiveForm:
    n = layout.size
    if e.kind == "sqnorm_diff":
        qf = compile_expr(e.children[0] - e.children[1], layout)
        c = qf.materialize().with_width(n)
        A = c.A.toarray()
        return ObjectiveForm(float(c.c0 @ c.c0), 2.0 * A.T @ c.c0, 2.0 * A.T @ A)
    qf = compile_expr(e, layout)
    zero = (0,) * e.nvars
    if any(sum(alpha) for alpha in qf.support()):
        raise ExprError("objective must be scalar (constant in the indeterminates) or a squared norm")
    c = qf.materialize([zero]).with_width(n)
    H = c.weighted_hessian(np.ones(1))
    return ObjectiveForm(float(c.c0[0]), c.A.toarray()[0], H)


# -- public derivative API -------------------------------------------------------

def _layout_for(exprs: Sequence[ExprNode], a: Mapping, layout: VarLayout | None) -> VarLayout:
    if layout is None:
        layout = VarLayout(collect_vars(exprs))
    for v in layout.variables:
        if v not in a:
            raise ExprError(f"decision variable {v.name!r} is unassigned")
    return layout


def jacobian(e: ExprNode, a: Mapping[DecisionVar, np.ndarray], layout: VarLayout | None = None,
             rows: Sequence[MultiIndex] | None = None) -> tuple[sp.csr_matrix, tuple[MultiIndex, ...]]:
    """Jacobian of the coefficients of ``e`` with respect to the stacked decisions.

    Returns the matrix and the row monomials (the structural support of
    ``e`` unless ``rows`` is given).
    """
    layout = _layout_for([e], a, layout)
    c = compile_expr(e, layout).materialize(rows).with_width(layout.size)
    return c.jacobian(layout.stack(a)), c.rows


def objective_gradient_hessian(e: ExprNode, a: Mapping[DecisionVar, np.ndarray],
                               layout: VarLayout | None = None) -> tuple[np.ndarray, np.ndarray]:
    layout = _layout_for([e], a, layout)
    obj = compile_objective(e, layout)
    return obj.gradient(layout.stack(a)), obj.H.copy()


def lagrangian_hessian(f: ExprNode, g: Sequence[ExprNode], a: Mapping[DecisionVar, np.ndarray],
                       lam: Sequence[np.ndarray], layout: VarLayout | None = None,
                       rows: Sequence[Sequence[MultiIndex]] | None = None) -> np.ndarray:
    """Hessian of ``f - sum_i <lam_i, g_i>`` in the stacked coefficients."""
    if len(lam) != len(g):
        raise ExprError("one dual vector per constraint required")
    layout = _layout_for([f, *g], a, layout)
    H = compile_objective(f, layout).H.copy()
    for k, (gi, li) in enumerate(zip(g, lam)):
        c = compile_expr(gi, layout).materialize(None if rows is None else rows[k]).with_width(layout.size)
        li = np.asarray(li, dtype=float)
        if li.shape != (c.nrows,):
            raise ExprError(f"dual {k} has length {li.shape[0]}, constraint has {c.nrows} coefficients")
        H -= c.weighted_hessian(li)
    return H
