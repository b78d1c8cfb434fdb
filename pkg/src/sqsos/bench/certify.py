"""Pointwise validation of returned certificates by sampling the sublevel set.

Points of ``{V <= level}`` are drawn along random rays from the origin: the
first crossing of the level is bracketed on a radial grid and refined by
bisection, then a radius is drawn uniformly below it. The checks are plain
polynomial evaluations, independent of the conic machinery.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..poly import Polynomial
from .problems import BuiltProblem

GRID = 64
BISECT = 40


@dataclass
class CertificateRecord:
    samples: int
    seed: int
    level: float
    violations: int
    checks: dict[str, int] = field(default_factory=dict)
    unbounded_rays: int = 0
    max_radius: float = 0.0

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return asdict(self)


def sublevel_samples(V: Polynomial, level: float, count: int, seed: int,
                     radius_cap: float = 10.0) -> tuple[np.ndarray, int, float]:
    """``count`` points with ``V <= level`` and ``x != 0``; also unbounded-ray count."""
    rng = np.random.default_rng(seed)
    n = V.nvars
    dirs = rng.standard_normal((count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    grid = np.linspace(0.0, radius_cap, GRID + 1)[1:]
    pts = (dirs[:, None, :] * grid[None, :, None]).reshape(-1, n)
    vals = V.evaluate_many(pts).reshape(count, GRID)
    above = vals > level
    unbounded = ~above.any(axis=1)
    first = np.where(unbounded, GRID, above.argmax(axis=1))
    lo = np.where(first > 0, grid[np.maximum(first - 1, 0)], 0.0)
    hi = np.where(unbounded, radius_cap, grid[np.minimum(first, GRID - 1)])
    todo = ~unbounded
    for _ in range(BISECT):
        mid = 0.5 * (lo + hi)
        vm = V.evaluate_many(dirs * mid[:, None])
        up = (vm > level) & todo
        hi = np.where(up, mid, hi)
        lo = np.where(~up & todo, mid, lo)
    radii = np.where(unbounded, radius_cap, lo)
    # uniform in (0, r]: never the origin, never past the crossing
    r = radii * (1.0 - rng.uniform(0.0, 1.0, count))
    return dirs * r[:, None], int(unbounded.sum()), float(radii.max())


def _lie(V: Polynomial, fld: list[Polynomial], pts: np.ndarray) -> np.ndarray:
    return sum(V.diff(i).evaluate_many(pts) * fi.evaluate_many(pts) for i, fi in enumerate(fld))


def certify_outcome(built: BuiltProblem, z, samples: int = 10_000, seed: int = 0,
                    tol: float = 0.0) -> CertificateRecord | None:
    """Count sampled points where a claimed property fails.

    ROA: ``V > 0``, ``Vdot < 0`` and ``s >= 0``. Synthesis additionally checks
    ``h <= 0`` and ``H kappa <= 1`` and uses the closed-loop field. ``tol``
    loosens every strict inequality by that amount. Custom problems have no
    such claims and give ``None``.
    """
    pf = built.pf
    if pf.kind == "custom":
        return None
    a = built.program.assignment(np.asarray(z, dtype=float))
    V = a.polynomial(built.variables["V"])
    if pf.kind == "synthesis":
        level = a.polynomial(built.variables["beta"]).coefficient((0,) * pf.nvars) \
            if pf.beta_decision else pf.beta
    else:
        level = pf.gamma
    pts, unbounded, rmax = sublevel_samples(V, level, samples, seed)
    checks: dict[str, np.ndarray] = {}
    checks["V > 0"] = V.evaluate_many(pts) <= -tol
    if pf.kind == "roa":
        checks["Vdot < 0"] = _lie(V, pf.dynamics, pts) >= tol
        checks["s >= 0"] = a.polynomial(built.variables["s"]).evaluate_many(pts) < -tol
    elif pf.kind == "synthesis":
        kappas = [a.polynomial(built.variables[f"kappa{j + 1}"]) for j in range(len(pf.inputs))]
        closed = [fi + sum((col[i] * k for col, k in zip(pf.inputs, kappas)), Polynomial.zero(pf.nvars))
                  for i, fi in enumerate(pf.dynamics)]
        checks["Vdot < 0"] = _lie(V, closed, pts) >= tol
        checks["h <= 0"] = pf.safe_set.evaluate_many(pts) > tol
        kv = np.stack([k.evaluate_many(pts) for k in kappas], axis=1)
        checks["H kappa <= 1"] = (kv @ pf.control_constraints.T > 1.0 + tol).any(axis=1)
    bad = np.zeros(len(pts), dtype=bool)
    for m in checks.values():
        bad |= m
    return CertificateRecord(samples, seed, float(level), int(bad.sum()),
                             {k: int(v.sum()) for k, v in checks.items()}, unbounded, rmax)
