"""Coordinate-descent baseline.

Each sweep minimises the objective over one block of decision variables at a
time with the others frozen. For the bilinear problems built here every
constraint is affine in each block, so one quadratic SOS solve on the block
is an exact block minimisation. Convergence uses ``|f_k - f_{k-1}| <= eps_opt``
after each sweep, the same tolerance the SQP iteration uses.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..engine import SqpConfig
from ..engine.program import NLProblem, SOSProgram, build_subproblem, solve_subproblem
from ..engine.solver import PhaseTimer, TraceRow

CONVERGED = "optimal"
INFEASIBLE_START = "infeasible-start"
SUBPROBLEM_FAILURE = "subproblem-failure"
MAX_ITER = "max-iter"


class BlockView(NLProblem):
    """The problem restricted to coordinates ``idx`` with the rest fixed at ``z``."""

    def __init__(self, base: NLProblem, z: np.ndarray, idx: np.ndarray):
        self.base = base
        self.z = np.asarray(z, dtype=float).copy()
        self.idx = np.asarray(idx)
        self.n = len(self.idx)
        self.gram_maps = base.gram_maps
        self.names = base.names

    def embed(self, zb) -> np.ndarray:
        out = self.z.copy()
        out[self.idx] = zb
        return out

    def objective(self, zb) -> float:
        return self.base.objective(self.embed(zb))

    def objective_gradient(self, zb) -> np.ndarray:
        return self.base.objective_gradient(self.embed(zb))[self.idx]

    def objective_hessian(self) -> np.ndarray:
        return self.base.objective_hessian()[np.ix_(self.idx, self.idx)]

    def values(self, zb):
        return self.base.values(self.embed(zb))

    def jacobians(self, zb):
        return [sp.csr_matrix(J[:, self.idx]) for J in self.base.jacobians(self.embed(zb))]


@dataclass
class CDOutcome:
    status: str
    z: np.ndarray
    f: float
    theta: float
    iterations: int
    history: list[float]
    trace: list[TraceRow]
    timings: dict
    wall_time: float
    message: str = ""
    failed_block: str | None = None
    problem: SOSProgram | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == CONVERGED


def block_indices(program: SOSProgram, names: Sequence[str]) -> np.ndarray:
    by_name = {v.name: v for v in program.variables}
    idx = []
    for name in names:
        s = program.layout.slice(by_name[name])
        idx.extend(range(s.start, s.stop))
    return np.array(idx, dtype=int)


def solve_block(program: SOSProgram, z: np.ndarray, names: Sequence[str], settings=None):
    """Exact minimisation over one block; returns the new point or None."""
    idx = block_indices(program, names)
    view = BlockView(program, z, idx)
    res = solve_subproblem(build_subproblem(view, z[idx], view.objective_hessian()), settings)
    if not res.ok:
        return None
    return view.embed(z[idx] + res.step)


def solve_coordinate_descent(program: SOSProgram, init, blocks: Sequence[Sequence[str]],
                             cfg: SqpConfig | None = None) -> CDOutcome:
    cfg = cfg or SqpConfig()
    settings = cfg.conic_settings()
    timer = PhaseTimer()
    t0 = time.perf_counter()
    z = program.stack(init) if not isinstance(init, np.ndarray) else init.astype(float).copy()
    idxs = [(("+".join(b)), block_indices(program, b)) for b in blocks]
    f = program.objective(z)
    history = [f]
    trace: list[TraceRow] = []

    def theta_of(zz):
        with timer("violation"):
            return program.violation(zz, cfg.violation, settings).theta

    def record(k, status):
        trace.append(TraceRow(k, "cd", f, theta_of(z), math.nan, False, status, math.nan,
                              1e3 * (time.perf_counter() - t0), z=z.copy()))

    record(0, "initial")
    kept = 0

    def done(status, msg, k, failed=None):
        return CDOutcome(status, z, f if status != INFEASIBLE_START else math.nan,
                         trace[-1].theta, k, history, trace, dict(timer.totals),
                         time.perf_counter() - t0, msg, failed, program)

    for k in range(1, cfg.max_iter + 1):
        for label, idx in idxs:
            view = BlockView(program, z, idx)
            with timer("subproblem"):
                sub = build_subproblem(view, z[idx], view.objective_hessian())
                res = solve_subproblem(sub, settings)
            if not res.ok:
                if k == 1:
                    return done(INFEASIBLE_START, f"block {label} infeasible at the first sweep "
                                f"({res.status}); coordinate descent needs a feasible start", k, label)
                # the previous sweep left a feasible point on the boundary; a
                # solver that cannot certify it keeps the block where it is
                kept += 1
                if kept > len(idxs):
                    return done(SUBPROBLEM_FAILURE, f"block {label} failed: {res.status}", k, label)
                continue
            kept = 0
            z = view.embed(z[idx] + res.step)
        f_prev, f = f, program.objective(z)
        history.append(f)
        record(k, "optimal")
        if abs(f - f_prev) <= cfg.eps_opt:
            return done(CONVERGED, "objective change below eps_opt", k)
    return done(MAX_ITER, "iteration limit reached", cfg.max_iter)
