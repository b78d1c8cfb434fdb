"""Gram-matrix parameterisation of the sum-of-squares cone.

A polynomial ``p`` of degree ``2d`` is SOS iff ``p = z' Q z`` for some PSD
``Q``, where ``z`` is the vector of monomials up to degree ``d``. The
:class:`GramMap` records, for every product monomial, which entries of ``Q``
contribute to its coefficient; :func:`transcribe_constraint` turns an affine
polynomial-valued map into conic rows using it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import SQRT2, Cone, ConicProblem, ConicSettings, PSD, Zero, smat, svec_indices
from .poly import MultiIndex, Polynomial, grlex_key, monomials_between

WITNESS_EIG_TOL = 1e-8


class DegreeOverflow(ValueError):
    """A constraint polynomial does not fit the Gram basis assigned to it."""


@dataclass(frozen=True)
class GramBasis:
    nvars: int
    half_degree: int
    low_degree: int = 0

    def __post_init__(self):
        if self.nvars < 1 or self.half_degree < 0 or not 0 <= self.low_degree <= self.half_degree:
            raise ValueError("invalid Gram basis degrees")

    @cached_property
    def zeta(self) -> tuple[MultiIndex, ...]:
        return tuple(monomials_between(self.nvars, self.low_degree, self.half_degree))

    def __len__(self) -> int:
        return len(self.zeta)


@dataclass(frozen=True)
class GramMap:
    basis: GramBasis
    rows: dict  # product monomial -> list of (i, j) with i <= j
    row_monomials: tuple[MultiIndex, ...]

    @property
    def side(self) -> int:
        return len(self.basis)

    @property
    def svec_dim(self) -> int:
        return self.side * (self.side + 1) // 2

    @cached_property
    def row_index(self) -> dict[MultiIndex, int]:
        return {a: k for k, a in enumerate(self.row_monomials)}

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Coefficients of ``z'Qz`` as a linear map of the scaled svec of Q."""
        pos = {ij: k for k, ij in enumerate(svec_indices(self.side))}
        r, c, v = [], [], []
        for alpha, pairs in self.rows.items():
            row = self.row_index[alpha]
            for i, j in pairs:
                r.append(row)
                c.append(pos[(i, j)])
                v.append(1.0 if i == j else SQRT2)
        return sp.csr_matrix((v, (r, c)), shape=(len(self.row_monomials), self.svec_dim))

    @cached_property
    def interior(self) -> np.ndarray:
        """Coefficient vector of ``z'z``, a point strictly inside the cone."""
        out = np.zeros(len(self.row_monomials))
        for a in self.basis.zeta:
            out[self.row_index[tuple(2 * x for x in a)]] += 1.0
        return out

    @cached_property
    def _row_columns(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per row: svec columns and their weights, diagonal entries first."""
        M = self.matrix.tocsr()
        out = []
        for k in range(M.shape[0]):
            cols = M.indices[M.indptr[k]:M.indptr[k + 1]]
            w = M.data[M.indptr[k]:M.indptr[k + 1]]
            order = np.argsort(w != 1.0, kind="stable")
            out.append((cols[order], w[order]))
        return out

    @cached_property
    def kernel(self) -> sp.csc_matrix:
        """Sparse basis of the null space of :attr:`matrix`.

        Every svec entry feeds exactly one row, so each row with ``m`` entries
        contributes ``m - 1`` two-term differences.
        """
        r, c, v = [], [], []
        k = 0
        for cols, w in self._row_columns:
            for j in range(1, len(cols)):
                r += [cols[0], cols[j]]
                c += [k, k]
                v += [-1.0 / w[0], 1.0 / w[j]]
                k += 1
        return sp.csc_matrix((v, (r, c)), shape=(self.svec_dim, k))

    def particular(self, coeffs) -> tuple[np.ndarray, float]:
        """Least-norm svec ``q`` with ``matrix @ q`` matching ``coeffs`` on every coverable row.

        The second return is the largest coefficient on a row no Gram entry
        reaches, which no ``q`` can match.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        q = np.zeros(self.svec_dim)
        miss = 0.0
        for (cols, w), c in zip(self._row_columns, coeffs):
            if len(cols):
                q[cols] = w * c / (w @ w)
            else:
                miss = max(miss, abs(c))
        return q, miss

    def coefficients(self, p: Polynomial) -> np.ndarray:
        """Dense coefficients of ``p`` over the row monomials."""
        try:
            return p.coefficients(self.row_monomials)
        except ValueError as exc:
            raise DegreeOverflow(str(exc)) from None

    def polynomial(self, coeffs) -> Polynomial:
        return Polynomial.from_coefficients(self.row_monomials, coeffs)


def _gram_map(basis: GramBasis) -> GramMap:
    rows: dict[MultiIndex, list[tuple[int, int]]] = {}
    z = basis.zeta
    for j in range(len(z)):
        for i in range(j + 1):
            alpha = tuple(a + b for a, b in zip(z[i], z[j]))
            rows.setdefault(alpha, []).append((i, j))
    monos = tuple(monomials_between(basis.nvars, 2 * basis.low_degree, 2 * basis.half_degree))
    for a in monos:
        rows.setdefault(a, [])
    return GramMap(basis, rows, monos)


def build_gram_map(n: int, two_d: int, low: int = 0) -> GramMap:
    """Gram map for degree-``two_d`` polynomials in ``n`` indeterminates.

    ``low`` drops basis monomials below that degree, which is exact for
    polynomials whose terms all have degree at least ``2 * low``.
    """
    if two_d < 0 or two_d % 2:
        raise ValueError(f"Gram maps need an even nonnegative degree, got {two_d}")
    return _gram_map(GramBasis(n, two_d // 2, low))


def gram_map_for_degrees(n: int, min_deg: int, max_deg: int, trim: bool = True) -> GramMap:
    """Smallest degree-range Gram map able to certify degrees in ``[min_deg, max_deg]``.

    Every square in an SOS decomposition has degree between half the lowest
    and half the highest degree of the polynomial, so trimming by degree
    loses no SOS certificate.
    """
    hi = (max(max_deg, 0) + 1) // 2
    lo = max(min_deg, 0) // 2 if trim else 0
    return _gram_map(GramBasis(n, hi, min(lo, hi)))


def gram_map_for(p: Polynomial, trim: bool = True) -> GramMap:
    if p.is_zero():
        return gram_map_for_degrees(p.nvars, 0, 0, trim)
    return gram_map_for_degrees(p.nvars, p.min_degree, p.degree, trim)


def reconstruct(gmap: GramMap, Q) -> Polynomial:
    """The polynomial ``z' Q z``."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (gmap.side, gmap.side):
        raise ValueError(f"Q must be {gmap.side}x{gmap.side}, got {Q.shape}")
    Q = 0.5 * (Q + Q.T)
    terms: dict[MultiIndex, float] = {}
    for alpha, pairs in gmap.rows.items():
        c = sum(Q[i, i] if i == j else 2.0 * Q[i, j] for i, j in pairs)
        if c:
            terms[alpha] = c
    return Polynomial(gmap.basis.nvars, terms)


# -- transcription -------------------------------------------------------------

@dataclass
class ConicBlocks:
    """Rows ``A_x x + A_q q + s = b`` tying decision scalars ``x`` to Gram vectors.

    ``A_x`` has one block row per constraint (zero cone); ``q`` stacks the
    scaled Gram vectors, each living in its own PSD block.
    """
    A_x: sp.csr_matrix
    A_q: sp.csr_matrix
    b: np.ndarray
    psd_sides: list[int]
    row_slices: list[slice]
    gram_slices: list[slice]

    def cones(self) -> list[Cone]:
        return [Zero(self.b.shape[0])] + [PSD(s) for s in self.psd_sides]


def transcribe_constraint(
    maps: Sequence[tuple[np.ndarray, sp.spmatrix]],
    gram_maps: Sequence[GramMap],
) -> ConicBlocks:
    """Rows expressing ``c_k + C_k x`` in the SOS cone for each ``k``.

    ``maps[k] = (c_k, C_k)`` gives the coefficients over the row monomials of
    ``gram_maps[k]`` as an affine function of the decision scalars ``x``.
    Each constraint becomes ``M_k q_k - C_k x = c_k`` plus ``q_k`` PSD.
    """
    if len(maps) != len(gram_maps):
        raise ValueError("one Gram map per constraint required")
    if not maps:
        raise ValueError("no constraints to transcribe")
    nx = maps[0][1].shape[1]
    ax, aq, bs, sides, rsl, gsl = [], [], [], [], [], []
    r0 = g0 = 0
    for (c, C), gm in zip(maps, gram_maps):
        c = np.asarray(c, dtype=float)
        C = sp.csr_matrix(C)
        nrow = len(gm.row_monomials)
        if c.shape != (nrow,) or C.shape != (nrow, nx):
            raise DegreeOverflow(
                f"constraint map has {c.shape[0]} coefficients but the Gram basis spans {nrow}")
        ax.append(-C)
        aq.append(gm.matrix)
        bs.append(c)
        sides.append(gm.side)
        rsl.append(slice(r0, r0 + nrow))
        gsl.append(slice(g0, g0 + gm.svec_dim))
        r0 += nrow
        g0 += gm.svec_dim
    return ConicBlocks(
        A_x=sp.vstack(ax, format="csr"),
        A_q=sp.block_diag(aq, format="csr"),
        b=np.concatenate(bs),
        psd_sides=sides,
        row_slices=rsl,
        gram_slices=gsl,
    )


def assemble(blocks: ConicBlocks, P_x=None, q_x=None, nq_cost: np.ndarray | None = None) -> ConicProblem:
    """Full conic problem over ``[x, q]`` from transcribed blocks."""
    nx = blocks.A_x.shape[1]
    nq = blocks.A_q.shape[1]
    A_eq = sp.hstack([blocks.A_x, blocks.A_q])
    A_psd = sp.hstack([sp.csr_matrix((nq, nx)), -sp.identity(nq)])
    A = sp.vstack([A_eq, A_psd], format="csc")
    b = np.concatenate([blocks.b, np.zeros(nq)])
    q = np.zeros(nx + nq)
    if q_x is not None:
        q[:nx] = q_x
    if nq_cost is not None:
        q[nx:] = nq_cost
    P = None
    if P_x is not None:
        P = sp.block_diag([sp.csc_matrix(P_x), sp.csc_matrix((nq, nq))], format="csc")
    return ConicProblem(P, q, A, b, blocks.cones())


# -- SOS membership --------------------------------------------------------------

@dataclass
class SOSResult:
    is_sos: bool
    witness: np.ndarray | None
    status: str
    gram_map: GramMap | None = None
    min_eig: float = float("nan")
    detail: dict = field(default_factory=dict)


def sos_feasibility(p: Polynomial, settings: ConicSettings | None = None,
                    trim: bool = True) -> SOSResult:
    """Decide SOS membership of ``p`` by a feasibility SDP.

    The witness is a PSD Gram matrix (min eigenvalue at least -1e-8) whose
    reconstruction equals ``p`` up to solver precision.
    """
    if p.is_zero():
        gm = gram_map_for_degrees(p.nvars, 0, 0)
        return SOSResult(True, np.zeros((gm.side, gm.side)), "optimal", gm, 0.0)
    if p.degree % 2:
        raise ValueError("SOS membership needs an even-degree polynomial")
    gm = gram_map_for(p, trim)
    rhs = gm.coefficients(p)
    nq = gm.svec_dim
    A = sp.vstack([gm.matrix, -sp.identity(nq)], format="csc")
    b = np.concatenate([rhs, np.zeros(nq)])
    prob = ConicProblem(None, np.zeros(nq), A, b, [Zero(len(rhs)), PSD(gm.side)])
    sol = conic.solve(prob, settings=settings)
    if sol.status == "primal-infeasible":
        return SOSResult(False, None, sol.status, gm,
                         detail={"certificate": sol.y[: len(rhs)].copy()})
    if not sol.ok:
        return SOSResult(False, None, sol.status, gm)
    Q = smat(sol.x)
    lam = float(np.linalg.eigvalsh(Q).min())
    ok = lam >= -WITNESS_EIG_TOL
    return SOSResult(ok, Q if ok else None, sol.status, gm, lam)


def block_sizes(n: int, two_d: int, low: int = 0) -> tuple[int, int]:
    """(Gram side length, number of coefficient rows) for a degree range."""
    side = comb(n + two_d // 2, two_d // 2) - (comb(n + low - 1, low - 1) if low > 0 else 0)
    rows = comb(n + two_d, two_d) - (comb(n + 2 * low - 1, 2 * low - 1) if low > 0 else 0)
    return side, rows


def sorted_monomials(monos) -> list[MultiIndex]:
    return sorted(set(monos), key=grlex_key)
