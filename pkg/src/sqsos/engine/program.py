"""Nonlinear SOS programs and their quadratic SOS subproblems.

A program minimises ``f(z)`` subject to ``g_i(z) in Sigma[x]`` where ``z``
stacks the decision coefficients. Every ``g_i`` is compiled once against a
frozen Gram basis, so coefficient vectors, Jacobians and the constraint
curvature are cheap array operations inside the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .. import conic
from ..conic import ConicProblem, ConicSettings, ConicSolution
from ..expr import (SOS, CoeffAssignment, Compiled, DecisionVar, ExprError, ExprNode,
                    ObjectiveForm, VarLayout, collect_vars, compile_expr, compile_objective)
from ..poly import MultiIndex, Polynomial
from ..soscone import GramMap, assemble, gram_map_for_degrees, transcribe_constraint
from ..violation import ViolationConfig, ViolationReport, signed_distance, violation_of_coefficients


@dataclass
class Constraint:
    expr: ExprNode
    name: str = ""
    multiplier: bool = False
    # degree range of the Gram basis; inferred from the expression if None
    degrees: tuple[int, int] | None = None


class NLProblem:
    """Interface the SQP iteration needs from a problem."""
    n: int
    gram_maps: list[GramMap]
    names: list[str]

    @property
    def m(self) -> int:
        return len(self.gram_maps)

    def objective(self, z) -> float:
        raise NotImplementedError

    def objective_gradient(self, z) -> np.ndarray:
        raise NotImplementedError

    def objective_hessian(self) -> np.ndarray:
        raise NotImplementedError

    def values(self, z) -> list[np.ndarray]:
        raise NotImplementedError

    def jacobians(self, z) -> list[sp.csr_matrix]:
        raise NotImplementedError

    def constraint_hessian(self, lams: Sequence[np.ndarray]) -> np.ndarray:
        """``sum_i`` Hessian of ``<lam_i, g_i>``."""
        raise NotImplementedError

    # shared helpers
    def lagrangian_gradient(self, z, lams, jacs=None) -> np.ndarray:
        jacs = self.jacobians(z) if jacs is None else jacs
        out = self.objective_gradient(z).copy()
        for J, lam in zip(jacs, lams):
            out -= J.T @ lam
        return out

    def lagrangian_hessian(self, lams) -> np.ndarray:
        return self.objective_hessian() - self.constraint_hessian(lams)

    def complementarity(self, z, lams, vals=None) -> float:
        vals = self.values(z) if vals is None else vals
        return max((abs(float(l @ v)) for l, v in zip(lams, vals)), default=0.0)

    def zero_duals(self) -> list[np.ndarray]:
        return [np.zeros(len(gm.row_monomials)) for gm in self.gram_maps]

    def violation(self, z, cfg: ViolationConfig, settings: ConicSettings | None = None,
                  vals=None) -> ViolationReport:
        vals = self.values(z) if vals is None else vals
        return violation_of_coefficients(vals, self.gram_maps, cfg, settings)

    def signed_distances(self, z, settings: ConicSettings | None = None) -> np.ndarray:
        out = []
        for c, gm in zip(self.values(z), self.gram_maps):
            r, st = signed_distance(c, gm, settings=settings)
            if np.isnan(r):
                raise RuntimeError(f"signed-distance solve failed: {st}")
            out.append(r)
        return np.array(out)


def _support_degrees(c: Compiled) -> tuple[int, int]:
    used = set(np.flatnonzero(c.c0))
    used.update(c.A.tocoo().row.tolist())
    used.update(c.qr.tolist())
    degs = [sum(c.rows[r]) for r in used]
    if not degs:
        return 0, 0
    return min(degs), max(degs)


class SOSProgram(NLProblem):
    """``min f(z)`` subject to SOS constraints on polynomial expressions.

    Variables with the ``sos`` role get their membership constraint added
    automatically (flagged as multiplier cones).
    """

    def __init__(self, objective: ExprNode, constraints: Sequence[ExprNode | Constraint],
                 variables: Sequence[DecisionVar] | None = None, trim: bool = True):
        cons = [c if isinstance(c, Constraint) else Constraint(c) for c in constraints]
        found = collect_vars([objective] + [c.expr for c in cons])
        if variables is None:
            variables = found
        else:
            missing = [v.name for v in found if v not in set(variables)]
            if missing:
                raise ExprError(f"variables not in the declared list: {missing}")
        self.layout = VarLayout(variables)
        self.variables = list(variables)
        for v in self.variables:
            if v.role == SOS:
                lo, hi = sum(v.basis[0]), sum(v.basis[-1])
                cons.append(Constraint(v.ref(), f"{v.name} in SOS", True, (lo, hi)))
        self.constraints = cons
        self.objective_expr = objective
        self.obj: ObjectiveForm = compile_objective(objective, self.layout)
        self.n = self.layout.size
        self.compiled: list[Compiled] = []
        self.gram_maps = []
        self.names = []
        for k, c in enumerate(cons):
            qf = compile_expr(c.expr, self.layout)
            probe = qf.materialize().with_width(self.n)
            lo, hi = c.degrees if c.degrees is not None else _support_degrees(probe)
            gm = gram_map_for_degrees(c.expr.nvars, lo, hi, trim)
            self.gram_maps.append(gm)
            self.compiled.append(qf.materialize(gm.row_monomials).with_width(self.n))
            self.names.append(c.name or f"g{k + 1}")

    # -- NLProblem --------------------------------------------------------------
    def objective(self, z) -> float:
        return self.obj.value(z)

    def objective_gradient(self, z) -> np.ndarray:
        return self.obj.gradient(z)

    def objective_hessian(self) -> np.ndarray:
        return self.obj.H

    def values(self, z) -> list[np.ndarray]:
        return [c.value(z) for c in self.compiled]

    def jacobians(self, z) -> list[sp.csr_matrix]:
        return [c.jacobian(z) for c in self.compiled]

    def constraint_hessian(self, lams) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        for c, lam in zip(self.compiled, lams):
            H += c.weighted_hessian(lam)
        return H

    # -- conveniences -------------------------------------------------------------
    def stack(self, init: Mapping[DecisionVar, object]) -> np.ndarray:
        a = init if isinstance(init, CoeffAssignment) else CoeffAssignment(init)
        return self.layout.stack(a)

    def assignment(self, z) -> CoeffAssignment:
        return self.layout.unstack(z)

    def polynomials(self, z) -> list[Polynomial]:
        return [c.polynomial(z) for c in self.compiled]

    def sizes(self) -> dict:
        """Problem dimensions as the subproblem sees them."""
        return {
            "decision_coefficients": self.n,
            "sos_constraints": self.m,
            "multiplier_cones": sum(c.multiplier for c in self.constraints),
            "coefficient_rows": sum(len(g.row_monomials) for g in self.gram_maps),
            "gram_sides": [g.side for g in self.gram_maps],
            "gram_entries": sum(g.svec_dim for g in self.gram_maps),
        }


# -- quadratic subproblem ----------------------------------------------------------

@dataclass
class Subproblem:
    conic: ConicProblem
    n: int
    row_slices: list[slice]


@dataclass
class SubproblemResult:
    status: str
    step: np.ndarray | None
    duals: list[np.ndarray] | None
    solution: ConicSolution

    @property
    def ok(self) -> bool:
        return self.solution.ok


def build_subproblem(problem: NLProblem, z: np.ndarray, H: np.ndarray,
                     vals: Sequence[np.ndarray] | None = None,
                     jacs: Sequence[sp.spmatrix] | None = None,
                     soc_shift: Sequence[np.ndarray] | None = None) -> Subproblem:
    """Conic form of ``min 1/2 d'Hd + grad f'd  s.t.  g(z) + J d (+ shift) in Sigma``.

    Variables are the step ``d`` followed by one scaled Gram vector per
    constraint; the zero-cone duals are the new multiplier estimates.
    """
    vals = problem.values(z) if vals is None else vals
    jacs = problem.jacobians(z) if jacs is None else jacs
    rhs = list(vals)
    if soc_shift is not None:
        rhs = [v + s for v, s in zip(rhs, soc_shift)]
    blocks = transcribe_constraint(list(zip(rhs, jacs)), problem.gram_maps)
    prob = assemble(blocks, P_x=sp.csc_matrix(H), q_x=problem.objective_gradient(z))
    return Subproblem(prob, problem.n, blocks.row_slices)


def solve_subproblem(sub: Subproblem, settings: ConicSettings | None = None) -> SubproblemResult:
    sol = conic.solve(sub.conic, settings=settings)
    if not sol.ok:
        return SubproblemResult(sol.status, None, None, sol)
    step = sol.x[: sub.n].copy()
    duals = [sol.y[s].copy() for s in sub.row_slices]
    return SubproblemResult(sol.status, step, duals, sol)


# -- restoration problem -----------------------------------------------------------

class RestorationProblem(NLProblem):
    """``min sum r + rho/2 ||z - z_ref||^2  s.t.  g_i(z) + r_i s_i in Sigma, r >= 0``.

    ``s_i = zeta'zeta`` on each constraint's Gram basis. The elastic
    variables ``r`` are appended to ``z``; their nonnegativity is carried as
    extra constant-degree SOS constraints.
    """

    def __init__(self, base: NLProblem, z_ref: np.ndarray, rho: float):
        self.base = base
        self.z_ref = np.asarray(z_ref, dtype=float).copy()
        self.rho = float(rho)
        self.nb = base.n
        mb = base.m
        self.n = self.nb + mb
        nvars = base.gram_maps[0].basis.nvars
        self.r_map = gram_map_for_degrees(nvars, 0, 0)
        self.gram_maps = list(base.gram_maps) + [self.r_map] * mb
        self.names = list(base.names) + [f"r{k + 1} >= 0" for k in range(mb)]
        self._interiors = [gm.interior for gm in base.gram_maps]
        self._H = np.zeros((self.n, self.n))
        self._H[: self.nb, : self.nb] = self.rho * np.eye(self.nb)

    def split(self, w) -> tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        return w[: self.nb], w[self.nb:]

    def initial_point(self, z: np.ndarray, distances: np.ndarray) -> np.ndarray:
        return np.concatenate([z, np.maximum(distances, 0.0)])

    def objective(self, w) -> float:
        z, r = self.split(w)
        d = z - self.z_ref
        return float(r.sum() + 0.5 * self.rho * d @ d)

    def objective_gradient(self, w) -> np.ndarray:
        z, r = self.split(w)
        return np.concatenate([self.rho * (z - self.z_ref), np.ones_like(r)])

    def objective_hessian(self) -> np.ndarray:
        return self._H

    def values(self, w) -> list[np.ndarray]:
        z, r = self.split(w)
        base = self.base.values(z)
        return [v + ri * s for v, ri, s in zip(base, r, self._interiors)] + [np.array([ri]) for ri in r]

    def jacobians(self, w) -> list[sp.csr_matrix]:
        z, _ = self.split(w)
        mb = len(self._interiors)
        out = []
        for k, (J, s) in enumerate(zip(self.base.jacobians(z), self._interiors)):
            col = sp.csr_matrix((s, (np.arange(len(s)), np.full(len(s), k))), shape=(len(s), mb))
            out.append(sp.hstack([J, col], format="csr"))
        for k in range(mb):
            out.append(sp.csr_matrix(([1.0], ([0], [self.nb + k])), shape=(1, self.n)))
        return out

    def constraint_hessian(self, lams) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        H[: self.nb, : self.nb] = self.base.constraint_hessian(lams[: self.base.m])
        return H
