"""Standard-form cone programs and their interior-point solution.

Problems are stated as::

    minimize    1/2 x'Px + q'x
    subject to  Ax + s = b,  s in K

with ``K`` a product of zero, nonnegative, second-order and PSD cones. PSD
blocks use the scaled upper-triangular vectorisation: entries ``(i, j)``
with ``i <= j`` stacked column by column, off-diagonal entries multiplied by
``sqrt(2)`` so that the vectorisation is an isometry.

The numerical work is delegated to Clarabel, a primal-dual interior-point
method with Nesterov-Todd scaling and a homogeneous embedding that yields
infeasibility certificates.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import clarabel
import numpy as np
import scipy.sparse as sp

SQRT2 = math.sqrt(2.0)


# -- cones -------------------------------------------------------------------

@dataclass(frozen=True)
class Cone:
    kind: str  # "zero" | "nonneg" | "soc" | "psd"
    size: int  # length for zero/nonneg/soc, side length for psd

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "soc", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 0 or (self.kind == "soc" and self.size < 1):
            raise ValueError(f"bad cone size {self.size} for {self.kind}")

    @property
    def dim(self) -> int:
        if self.kind == "psd":
            return self.size * (self.size + 1) // 2
        return self.size


def Zero(k: int) -> Cone:
    return Cone("zero", k)


def Nonneg(k: int) -> Cone:
    return Cone("nonneg", k)


def SOC(k: int) -> Cone:
    return Cone("soc", k)


def PSD(side: int) -> Cone:
    return Cone("psd", side)


def cone_dim(cones: Sequence[Cone]) -> int:
    return sum(c.dim for c in cones)


def svec_indices(side: int) -> list[tuple[int, int]]:
    """Matrix positions ``(i, j)``, ``i <= j``, in vectorisation order."""
    return [(i, j) for j in range(side) for i in range(j + 1)]


def svec(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    return np.array([Q[i, j] if i == j else SQRT2 * Q[i, j] for i, j in svec_indices(Q.shape[0])])


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    side = int(round((math.sqrt(8 * len(v) + 1) - 1) / 2))
    if side * (side + 1) // 2 != len(v):
        raise ValueError("vector length is not triangular")
    Q = np.zeros((side, side))
    for k, (i, j) in enumerate(svec_indices(side)):
        if i == j:
            Q[i, i] = v[k]
        else:
            Q[i, j] = Q[j, i] = v[k] / SQRT2
    return Q


def project_cone(cone: Cone, v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``cone``."""
    v = np.asarray(v, dtype=float)
    if cone.kind == "zero":
        return np.zeros_like(v)
    if cone.kind == "nonneg":
        return np.maximum(v, 0.0)
    if cone.kind == "soc":
        t, x = v[0], v[1:]
        nx = np.linalg.norm(x)
        if nx <= t:
            return v.copy()
        if nx <= -t:
            return np.zeros_like(v)
        a = 0.5 * (t + nx)
        return np.concatenate([[a], a * x / nx])
    w, U = np.linalg.eigh(smat(v))
    return svec((U * np.maximum(w, 0.0)) @ U.T)


def cone_distance(cones: Sequence[Cone], v: np.ndarray, dual: bool = False) -> float:
    """Infinity-norm distance of ``v`` to the product cone (or its dual)."""
    worst, k = 0.0, 0
    for cone in cones:
        block = v[k:k + cone.dim]
        k += cone.dim
        if cone.kind == "zero":
            # dual of the zero cone is the whole space
            dist = 0.0 if dual else np.max(np.abs(block), initial=0.0)
        else:
            dist = np.max(np.abs(block - project_cone(cone, block)), initial=0.0)
        worst = max(worst, float(dist))
    return worst


# -- problems and solutions --------------------------------------------------

@dataclass
class ConicProblem:
    P: sp.spmatrix | None
    q: np.ndarray
    A: sp.spmatrix
    b: np.ndarray
    cones: list[Cone]

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csc_matrix(self.A)
        n = self.q.shape[0]
        if self.P is None:
            self.P = sp.csc_matrix((n, n))
        else:
            self.P = sp.csc_matrix(self.P)
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.b.shape[0], n)}")
        if cone_dim(self.cones) != self.b.shape[0]:
            raise ValueError("cone dimensions do not add up to the number of rows")
        if self.P.nnz and abs(self.P - self.P.T).max() > 1e-12 * max(1.0, abs(self.P).max()):
            raise ValueError("P must be symmetric")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    primal_objective: float = math.nan
    dual_objective: float = math.nan
    iterations: int = 0
    solve_time: float = 0.0
    residuals: "KKTResiduals | None" = None

    @property
    def ok(self) -> bool:
        """True for optimal and reduced-accuracy optimal solves."""
        return self.status in ("optimal", "optimal-inaccurate")


@dataclass
class KKTResiduals:
    primal: float
    dual: float
    gap: float
    cone_primal: float
    cone_dual: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.gap, self.cone_primal, self.cone_dual)


@dataclass
class ConicSettings:
    tol_feas: float = 1e-8
    tol_gap_abs: float = 1e-8
    tol_gap_rel: float = 1e-8
    max_iter: int = 200
    extra: dict = field(default_factory=dict)


DEFAULT_SETTINGS = ConicSettings()

_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal-inaccurate",
    "PrimalInfeasible": "primal-infeasible",
    "AlmostPrimalInfeasible": "primal-infeasible",
    "DualInfeasible": "dual-infeasible",
    "AlmostDualInfeasible": "dual-infeasible",
    "MaxIterations": "max-iter",
    "MaxTime": "max-iter",
}


def _clarabel_cones(cones: Sequence[Cone]) -> list:
    out = []
    for c in cones:
        if c.dim == 0:
            continue
        if c.kind == "zero":
            out.append(clarabel.ZeroConeT(c.size))
        elif c.kind == "nonneg":
            out.append(clarabel.NonnegativeConeT(c.size))
        elif c.kind == "soc":
            out.append(clarabel.SecondOrderConeT(c.size))
        else:
            out.append(clarabel.PSDTriangleConeT(c.size))
    return out


def solve(problem: ConicProblem, warm: ConicSolution | None = None,
          settings: ConicSettings | None = None) -> ConicSolution:
    """Solve ``problem``; never raises on numerical trouble.

    ``warm`` is accepted for interface symmetry; the interior-point backend
    always starts from its own central point.
    """
    cfg = settings or DEFAULT_SETTINGS
    n, m = problem.n, problem.m
    if m == 0:
        # unconstrained QP: Px = -q
        return _solve_unconstrained(problem)
    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.tol_feas = cfg.tol_feas
    opts.tol_gap_abs = cfg.tol_gap_abs
    opts.tol_gap_rel = cfg.tol_gap_rel
    opts.max_iter = cfg.max_iter
    opts.presolve_enable = False
    opts.chordal_decomposition_enable = False
    for key, val in cfg.extra.items():
        setattr(opts, key, val)
    P = sp.triu(problem.P, format="csc")
    try:
        solver = clarabel.DefaultSolver(P, problem.q, problem.A, problem.b,
                                        _clarabel_cones(problem.cones), opts)
        res = solver.solve()
    except Exception:  # factorisation or setup breakdown inside the backend
        return ConicSolution(np.full(n, np.nan), np.full(m, np.nan), np.full(m, np.nan),
                             "numerical-error")
    status = _STATUS.get(str(res.status).split(".")[-1], "numerical-error")
    sol = ConicSolution(
        x=np.array(res.x), y=np.array(res.z), s=np.array(res.s), status=status,
        primal_objective=float(res.obj_val), dual_objective=float(res.obj_val_dual),
        iterations=int(res.iterations), solve_time=float(res.solve_time),
    )
    if sol.ok:
        sol.residuals = kkt_residuals(problem, sol)
    return sol


def _solve_unconstrained(problem: ConicProblem) -> ConicSolution:
    P = problem.P.toarray()
    try:
        x = np.linalg.solve(P, -problem.q)
        status = "optimal"
    except np.linalg.LinAlgError:
        x = np.full(problem.n, np.nan)
        status = "dual-infeasible"
    obj = 0.5 * x @ P @ x + problem.q @ x
    return ConicSolution(x, np.zeros(0), np.zeros(0), status, obj, obj)


def kkt_residuals(problem: ConicProblem, sol: ConicSolution) -> KKTResiduals:
    """Primal, dual, gap and cone-membership residuals (all nonnegative)."""
    if sol.x.shape != (problem.n,) or sol.s.shape != (problem.m,) or sol.y.shape != (problem.m,):
        raise ValueError("solution dimensions do not match the problem")
    x, y, s = sol.x, sol.y, sol.s
    Px = problem.P @ x
    primal = np.max(np.abs(problem.A @ x + s - problem.b), initial=0.0)
    dual = np.max(np.abs(Px + problem.q + problem.A.T @ y), initial=0.0)
    gap = abs(x @ Px + problem.q @ x + problem.b @ y)
    return KKTResiduals(
        primal=float(primal), dual=float(dual), gap=float(gap),
        cone_primal=cone_distance(problem.cones, s),
        cone_dual=cone_distance(problem.cones, y, dual=True),
    )


def objective(problem: ConicProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ (problem.P @ x) + problem.q @ x)


# -- epigraph reformulation --------------------------------------------------

def epigraph_lift(problem: ConicProblem) -> ConicProblem:
    """Move the quadratic cost into a second-order cone constraint.

    Appends one scalar ``t`` to the variables and the rows
    ``(1 + t, 1 - t, sqrt(2) F x)`` in a second-order cone, where
    ``P = F'F``; the cost becomes ``t + q'x``.
    """
    P = problem.P.toarray()
    if not np.any(P):
        raise ValueError("epigraph_lift needs a nonzero quadratic cost")
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -1e-10 * scale:
        raise ValueError("P is not positive semidefinite")
    keep = w > 1e-14 * scale
    F = (np.sqrt(w[keep])[:, None]) * V[:, keep].T
    n, r = problem.n, F.shape[0]
    A_soc = sp.vstack([
        sp.csc_matrix(([-1.0], ([0], [n])), shape=(1, n + 1)),
        sp.csc_matrix(([1.0], ([0], [n])), shape=(1, n + 1)),
        sp.hstack([sp.csc_matrix(-SQRT2 * F), sp.csc_matrix((r, 1))]),
    ])
    A = sp.vstack([sp.hstack([problem.A, sp.csc_matrix((problem.m, 1))]), A_soc], format="csc")
    b = np.concatenate([problem.b, [1.0, 1.0], np.zeros(r)])
    q = np.concatenate([problem.q, [1.0]])
    return ConicProblem(None, q, A, b, list(problem.cones) + [SOC(r + 2)])


# -- debug dump ---------------------------------------------------------------

def dump_problem(problem: ConicProblem, out: TextIO | None = None) -> str:
    """Write a plain-text triplet dump for cross-checking with other solvers."""
    buf = io.StringIO()
    buf.write(f"n {problem.n}\nm {problem.m}\n")
    buf.write("cones " + " ".join(f"{c.kind}:{c.size}" for c in problem.cones) + "\n")
    P = sp.coo_matrix(sp.triu(problem.P))
    for i, j, v in zip(P.row, P.col, P.data):
        buf.write(f"P {i} {j} {float(v)!r}\n")
    for i, v in enumerate(problem.q):
        if v:
            buf.write(f"q {i} {float(v)!r}\n")
    A = sp.coo_matrix(problem.A)
    for i, j, v in zip(A.row, A.col, A.data):
        buf.write(f"A {i} {j} {float(v)!r}\n")
    for i, v in enumerate(problem.b):
        if v:
            buf.write(f"b {i} {float(v)!r}\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def load_problem(text: str) -> ConicProblem:
    """Inverse of :func:`dump_problem`."""
    n = m = 0
    cones: list[Cone] = []
    P, A, q, b = [], [], {}, {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "n":
            n = int(parts[1])
        elif tag == "m":
            m = int(parts[1])
        elif tag == "cones":
            for item in parts[1:]:
                kind, size = item.split(":")
                cones.append(Cone(kind, int(size)))
        elif tag in ("P", "A"):
            (P if tag == "P" else A).append((int(parts[1]), int(parts[2]), float(parts[3])))
        elif tag == "q":
            q[int(parts[1])] = float(parts[2])
        elif tag == "b":
            b[int(parts[1])] = float(parts[2])
        else:
            raise ValueError(f"unknown record {tag!r}")

    def build(trip, shape):
        if not trip:
            return sp.csc_matrix(shape)
        r, c, v = zip(*trip)
        return sp.csc_matrix((v, (r, c)), shape=shape)

    Pu = build(P, (n, n))
    Pfull = Pu + sp.triu(Pu, k=1).T
    qv = np.zeros(n)
    for i, v in q.items():
        qv[i] = v
    bv = np.zeros(m)
    for i, v in b.items():
        bv[i] = v
    return ConicProblem(Pfull, qv, build(A, (m, n)), bv, cones)
