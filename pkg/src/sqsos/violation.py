"""Constraint violation of polynomial vectors with respect to the SOS cone.

Three estimates of how far ``p = (p_1, ..., p_m)`` is from ``Sigma[x]^m``:

* signed distance: smallest ``r`` with ``p_j + r s_j`` SOS for an interior
  direction ``s_j`` (negative inside the cone);
* projection: squared coefficient distance to the nearest SOS polynomial;
* sampling: most negative value on random points of a hypercube. Cheap, but
  blind to nonnegative non-SOS polynomials such as Motzkin's.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConicProblem, ConicSettings, PSD, SOC, cone_dim, svec
from .poly import Polynomial, PolyVec
from .soscone import GramMap, gram_map_for, gram_map_for_degrees

SIGNED_DISTANCE = "signed-distance"
PROJECTION = "projection"
SAMPLING = "sampling"
METHODS = (SIGNED_DISTANCE, PROJECTION, SAMPLING)


@dataclass(frozen=True)
class ViolationConfig:
    method: str = SIGNED_DISTANCE
    eps: float = 1e-6
    sample_count: int = 1000
    hypercube_radius: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown violation method {self.method!r}; choose from {METHODS}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if not self.hypercube_radius > 0:
            raise ValueError("hypercube_radius must be positive")


@dataclass
class ViolationReport:
    theta: float
    per_constraint: np.ndarray
    method: str
    statuses: list[str] = field(default_factory=list)
    solve_time: float = 0.0

    def __post_init__(self):
        assert self.theta >= 0.0


def _entries(p) -> list[Polynomial]:
    if isinstance(p, Polynomial):
        return [p]
    return list(PolyVec(p))


def _basis_for(p: Polynomial, s: Polynomial | None) -> GramMap:
    if s is None:
        return gram_map_for(p)
    degs = [q for q in (p, s) if not q.is_zero()]
    lo = min(q.min_degree for q in degs)
    hi = max(q.degree for q in degs)
    return gram_map_for_degrees(p.nvars, lo, hi)


def signed_distance(coeffs: np.ndarray, gm: GramMap, interior: np.ndarray | None = None,
                    settings: ConicSettings | None = None) -> tuple[float, str]:
    """``min r`` such that ``coeffs + r * interior`` is SOS on ``gm``.

    Solved in kernel form: Gram matrices of ``coeffs + r * interior`` are
    ``Q0 + r S0 + N y`` with ``N`` spanning the null space of the Gram map, so
    the only constraint is one PSD block. Returns ``(-inf, status)`` when ``r``
    is unbounded below and ``(nan, status)`` when no Gram entry reaches a
    nonzero coefficient.
    """
    q0, miss_p = gm.particular(coeffs)
    if interior is None:
        s0, miss_s = svec(np.eye(gm.side)), 0.0
    else:
        s0, miss_s = gm.particular(interior)
    if max(miss_p, miss_s) > 0.0:
        return np.nan, "primal-infeasible"
    N = gm.kernel
    # variables (r, y): q0 + r s0 + N y in PSD
    A = -sp.hstack([sp.csc_matrix(s0.reshape(-1, 1)), N], format="csc")
    cost = np.zeros(1 + N.shape[1])
    cost[0] = 1.0
    sol = conic.solve(ConicProblem(None, cost, A, q0, [PSD(gm.side)]), settings=settings)
    if sol.status == "dual-infeasible":
        return -np.inf, sol.status
    if not sol.ok:
        return np.nan, sol.status
    return float(sol.x[0]), sol.status


def theta_signed_distance(p, interior_point=None, eps: float = 1e-6,
                          gram_maps: Sequence[GramMap] | None = None,
                          settings: ConicSettings | None = None) -> ViolationReport:
    """Overall signed distance: ``max_j r_j*`` if it exceeds ``eps``, else 0.

    ``interior_point`` defaults to ``z'z`` on each entry's Gram basis.
    """
    ps = _entries(p)
    ss = [None] * len(ps) if interior_point is None else _entries(interior_point)
    if len(ss) != len(ps):
        raise ValueError("one interior polynomial per entry required")
    t0 = time.perf_counter()
    rs, statuses = [], []
    for k, (pk, sk) in enumerate(zip(ps, ss)):
        gm = gram_maps[k] if gram_maps is not None else _basis_for(pk, sk)
        sv = None if sk is None else gm.coefficients(sk)
        r, st = signed_distance(gm.coefficients(pk), gm, sv, settings)
        if np.isnan(r):
            raise RuntimeError(f"signed-distance solve failed on entry {k}: {st}")
        rs.append(r)
        statuses.append(st)
    rs = np.array(rs)
    worst = float(rs.max())
    theta = worst if worst > eps else 0.0
    return ViolationReport(theta, rs, SIGNED_DISTANCE, statuses, time.perf_counter() - t0)


def projection_distance(coeffs: np.ndarray, gm: GramMap,
                        settings: ConicSettings | None = None) -> tuple[float, str]:
    """Euclidean coefficient distance from ``coeffs`` to the SOS cone on ``gm``."""
    nr = len(gm.row_monomials)
    nq = gm.svec_dim
    # variables (q, t): (t, M q - c) in SOC, q in PSD; minimise t
    A_soc = sp.vstack([
        sp.hstack([sp.csr_matrix((1, nq)), sp.csr_matrix(np.array([[-1.0]]))]),
        sp.hstack([-gm.matrix, sp.csr_matrix((nr, 1))]),
    ])
    A_psd = sp.hstack([-sp.identity(nq), sp.csr_matrix((nq, 1))])
    A = sp.vstack([A_soc, A_psd], format="csc")
    b = np.concatenate([[0.0], -coeffs, np.zeros(nq)])
    cost = np.zeros(nq + 1)
    cost[-1] = 1.0
    cones = [SOC(nr + 1), PSD(gm.side)]
    assert cone_dim(cones) == A.shape[0]
    sol = conic.solve(ConicProblem(None, cost, A, b, cones), settings=settings)
    if not sol.ok:
        raise RuntimeError(f"projection solve failed: {sol.status}")
    return max(float(sol.x[-1]), 0.0), sol.status


def theta_projection(p, eps: float = 1e-6, gram_maps: Sequence[GramMap] | None = None,
                     settings: ConicSettings | None = None) -> ViolationReport:
    """Sum over entries of the squared distance to the nearest SOS polynomial.

    Entries closer than ``eps`` count as zero. Odd-degree entries are
    accepted: the odd top-degree coefficients then simply count as distance.
    """
    ps = _entries(p)
    t0 = time.perf_counter()
    ds, statuses = [], []
    for k, pk in enumerate(ps):
        gm = gram_maps[k] if gram_maps is not None else gram_map_for(pk, trim=False)
        d, st = projection_distance(gm.coefficients(pk), gm, settings)
        ds.append(d)
        statuses.append(st)
    ds = np.array(ds)
    sq = np.where(ds > eps, ds**2, 0.0)
    return ViolationReport(float(sq.sum()), ds**2, PROJECTION, statuses, time.perf_counter() - t0)


def theta_sampling(p, cfg: ViolationConfig | None = None) -> ViolationReport:
    """``|p_min|`` over uniform samples of ``[-R, R]^n`` if negative, else 0."""
    cfg = cfg or ViolationConfig(method=SAMPLING)
    ps = _entries(p)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.rng_seed)
    n = ps[0].nvars
    pts = rng.uniform(-cfg.hypercube_radius, cfg.hypercube_radius, size=(cfg.sample_count, n))
    mins = np.array([pk.evaluate_many(pts).min() for pk in ps])
    pmin = float(mins.min())
    theta = -pmin if pmin < 0 else 0.0
    return ViolationReport(theta, mins, SAMPLING, [], time.perf_counter() - t0)


def compute_violation(p, cfg: ViolationConfig, gram_maps: Sequence[GramMap] | None = None,
                      settings: ConicSettings | None = None) -> ViolationReport:
    if cfg.method == SIGNED_DISTANCE:
        return theta_signed_distance(p, eps=cfg.eps, gram_maps=gram_maps, settings=settings)
    if cfg.method == PROJECTION:
        return theta_projection(p, eps=cfg.eps, gram_maps=gram_maps, settings=settings)
    return theta_sampling(p, cfg)


def violation_of_coefficients(coeffs: Sequence[np.ndarray], gram_maps: Sequence[GramMap],
                              cfg: ViolationConfig,
                              settings: ConicSettings | None = None) -> ViolationReport:
    """Violation of constraint values given as coefficients on their Gram rows."""
    if cfg.method == SAMPLING:
        return theta_sampling([gm.polynomial(c) for c, gm in zip(coeffs, gram_maps)], cfg)
    t0 = time.perf_counter()
    vals, statuses = [], []
    for k, (c, gm) in enumerate(zip(coeffs, gram_maps)):
        if cfg.method == SIGNED_DISTANCE:
            v, st = signed_distance(c, gm, settings=settings)
            if np.isnan(v):
                raise RuntimeError(f"signed-distance solve failed on constraint {k}: {st}")
        else:
            v, st = projection_distance(c, gm, settings)
        vals.append(v)
        statuses.append(st)
    vals = np.array(vals)
    if cfg.method == SIGNED_DISTANCE:
        worst = float(vals.max())
        theta = worst if worst > cfg.eps else 0.0
        return ViolationReport(theta, vals, SIGNED_DISTANCE, statuses, time.perf_counter() - t0)
    sq = np.where(vals > cfg.eps, vals**2, 0.0)
    return ViolationReport(float(sq.sum()), vals**2, PROJECTION, statuses, time.perf_counter() - t0)
