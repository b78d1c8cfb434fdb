"""Sequential quadratic SOS iteration with a filter line search."""

from __future__ import annotations

import math
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .config import SqpConfig
from .filter import (Filter, armijo, augment_filter, envelope_progress, f_type_switch,
                     filter_acceptable, restoration_penalty)
from .hessian import damped_bfgs, initial_hessian, regularize
from .program import NLProblem, RestorationProblem, SOSProgram, build_subproblem, solve_subproblem

OPTIMAL = "optimal"
LOCALLY_INFEASIBLE = "locally-infeasible"
MAX_ITER = "max-iter"
STALLED = "stalled"

MAIN = "main"
RESTORATION = "restoration"


@dataclass
class IterateState:
    z: np.ndarray
    lams: list
    H: np.ndarray
    f: float
    theta: float
    kkt: float = math.nan
    k: int = 0
    phase: str = MAIN


@dataclass
class TraceRow:
    iter: int
    phase: str
    f: float
    theta: float
    alpha: float
    soc_used: bool
    subproblem_status: str
    kkt_scaled: float
    wall_ms: float
    # diagnostics kept in memory only
    z: np.ndarray | None = None
    step_inf: float = math.nan
    hess_min_eig: float = math.nan
    filter_at_accept: Filter | None = None
    augmented: bool = False
    f_orig: float = math.nan
    theta_orig: float = math.nan

    CSV_FIELDS = ("iter", "phase", "f", "theta", "alpha", "soc_used", "subproblem_status",
                  "kkt_scaled", "wall_ms")

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


@dataclass
class SolveOutcome:
    status: str
    state: IterateState
    trace: list[TraceRow]
    timings: dict
    iterations: int
    restorations: int
    problem: NLProblem
    config: SqpConfig
    message: str = ""
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def z(self) -> np.ndarray:
        return self.state.z

    def assignment(self):
        if not isinstance(self.problem, SOSProgram):
            raise TypeError("assignments are only available for SOS programs")
        return self.problem.assignment(self.state.z)

    def main_trace(self) -> list[TraceRow]:
        return [r for r in self.trace if r.phase == MAIN]


class PhaseTimer:
    """Exclusive wall-clock per phase: nested phases pause their parent."""

    def __init__(self):
        self.totals: dict[str, float] = defaultdict(float)
        self._stack: list[list] = []

    @contextmanager
    def __call__(self, name: str):
        now = time.perf_counter()
        if self._stack:
            self.totals[self._stack[-1][0]] += now - self._stack[-1][1]
        self._stack.append([name, now])
        try:
            yield
        finally:
            label, start = self._stack.pop()
            end = time.perf_counter()
            self.totals[label] += end - start
            if self._stack:
                self._stack[-1][1] = end


def scaled_termination(grad_lag, f: float, comp: float, omega, cfg: SqpConfig) -> tuple[float, bool]:
    """Ratio of ``||grad L||_inf`` to its scaled bound, and whether the bound holds.

    The bound is ``(eps_opt max(1, |f|) + comp) / max(1, ||omega||_inf)``.
    """
    grad_lag = np.asarray(grad_lag, dtype=float)
    omega = np.asarray(omega, dtype=float)
    bound = (cfg.eps_opt * max(1.0, abs(f)) + comp) / max(1.0, float(np.max(np.abs(omega), initial=0.0)))
    lhs = float(np.max(np.abs(grad_lag), initial=0.0))
    return lhs / bound, lhs <= bound


@dataclass
class _Step:
    kind: str  # accepted | restore | stall
    status: str
    z: np.ndarray | None = None
    f: float = math.nan
    theta: float = math.nan
    alpha: float = math.nan
    soc: bool = False
    omega: np.ndarray | None = None
    duals: list | None = None
    flt: Filter | None = None
    filter_at_accept: Filter | None = None
    augmented: bool = False


class _Engine:
    def __init__(self, problem: NLProblem, cfg: SqpConfig):
        self.problem = problem
        self.cfg = cfg
        self.settings = cfg.conic_settings()
        self.timer = PhaseTimer()
        self.trace: list[TraceRow] = []
        self.t0 = time.perf_counter()
        self.restorations = 0

    # -- evaluation ------------------------------------------------------------
    def evaluate(self, problem: NLProblem, z: np.ndarray):
        vals = problem.values(z)
        with self.timer("violation"):
            theta = problem.violation(z, self.cfg.violation, self.settings, vals).theta
        return problem.objective(z), theta

    def ms(self) -> float:
        return 1e3 * (time.perf_counter() - self.t0)

    def initial_hessian(self, problem: NLProblem, lams, diag: np.ndarray | None = None):
        cfg = self.cfg
        if cfg.exact_hessian:
            return regularize(problem.lagrangian_hessian(lams), cfg.hessian)
        if diag is not None:
            return np.diag(diag)
        return initial_hessian(problem.n, cfg.hessian, cfg.hessian_init_scale)

    def update_hessian(self, problem: NLProblem, H, z_old, z_new, lams_new):
        with self.timer("hessian"):
            if self.cfg.exact_hessian:
                return regularize(problem.lagrangian_hessian(lams_new), self.cfg.hessian)
            s = z_new - z_old
            y = problem.lagrangian_gradient(z_new, lams_new) - problem.lagrangian_gradient(z_old, lams_new)
            return damped_bfgs(H, s, y)

    def scaled_kkt(self, problem: NLProblem, z, lams, f, omega) -> tuple[float, bool]:
        grad = problem.lagrangian_gradient(z, lams)
        comp = problem.complementarity(z, lams)
        return scaled_termination(grad, f, comp, omega, self.cfg)

    # -- one iteration -----------------------------------------------------------
    def accept(self, f, theta, ft, tt, gTd, alpha, flt: Filter, theta_min) -> tuple[bool, bool]:
        """Acceptance cascade; returns (accepted, augment filter)."""
        if not filter_acceptable(ft, tt, flt):
            return False, False
        if f_type_switch(gTd, alpha, theta, self.cfg) and tt < theta_min:
            return armijo(f, ft, gTd, alpha, self.cfg), False
        return envelope_progress(theta, f, ft, tt, self.cfg), True

    def iterate(self, problem: NLProblem, st: IterateState, flt: Filter, theta_min: float) -> _Step:
        cfg = self.cfg
        z = st.z
        vals = problem.values(z)
        jacs = problem.jacobians(z)
        with self.timer("subproblem"):
            res = solve_subproblem(build_subproblem(problem, z, st.H, vals, jacs), self.settings)
        if not res.ok:
            return _Step("restore", res.status, flt=flt)
        omega = res.step
        if float(np.max(np.abs(omega), initial=0.0)) == 0.0 and st.theta > cfg.eps_feas:
            return _Step("restore", res.status, flt=flt)
        gTd = float(problem.objective_gradient(z) @ omega)
        alpha = 1.0
        soc_tried = False
        with self.timer("line-search"):
            while alpha >= cfg.alpha_min:
                zt = z + alpha * omega
                ft, tt = self.evaluate(problem, zt)
                ok, aug = self.accept(st.f, st.theta, ft, tt, gTd, alpha, flt, theta_min)
                used_soc = False
                if not ok and alpha == 1.0 and cfg.soc and not soc_tried:
                    soc_tried = True
                    vt = problem.values(z + omega)
                    shift = [a - b - J @ omega for a, b, J in zip(vt, vals, jacs)]
                    with self.timer("subproblem"):
                        r2 = solve_subproblem(
                            build_subproblem(problem, z, st.H, vals, jacs, soc_shift=shift), self.settings)
                    if r2.ok:
                        zs = z + r2.step
                        fs, ts = self.evaluate(problem, zs)
                        ok, aug = self.accept(st.f, st.theta, fs, ts, gTd, 1.0, flt, theta_min)
                        if ok:
                            zt, ft, tt, used_soc = zs, fs, ts, True
                if ok:
                    new_flt = augment_filter(flt, st.theta, st.f) if aug else flt
                    return _Step("accepted", res.status, zt, ft, tt, alpha, used_soc, omega, res.duals,
                                 new_flt, flt, aug)
                alpha *= 0.5
        return _Step("restore", res.status, omega=omega, duals=res.duals,
                     flt=augment_filter(flt, st.theta, st.f))

    def advance(self, problem: NLProblem, st: IterateState, step: _Step) -> IterateState:
        lams = [l + step.alpha * (lp - l) for l, lp in zip(st.lams, step.duals)]
        H = self.update_hessian(problem, st.H, st.z, step.z, lams)
        kkt, _ = self.scaled_kkt(problem, step.z, lams, step.f, step.omega)
        return IterateState(step.z, lams, H, step.f, step.theta, kkt, st.k + 1, st.phase)

    def converged(self, problem: NLProblem, st: IterateState, omega, f_prev: float) -> bool:
        """Scaled KKT test plus the objective-change guarantee it is meant to imply.

        The complementarity term lets the scaled test pass at strictly
        feasible, non-complementary points, so the last objective change is
        checked explicitly as well.
        """
        _, ok = self.scaled_kkt(problem, st.z, st.lams, st.f, omega)
        return (ok and st.theta <= self.cfg.eps_feas
                and abs(st.f - f_prev) <= self.cfg.eps_opt)

    def null_step(self, problem: NLProblem, st: IterateState, step: _Step) -> bool:
        """A rejected step from a feasible KKT point whose model predicts no progress.

        The line search cannot accept a step that leaves ``f`` unchanged, so
        an iterate that lands exactly on a solution would otherwise stall.
        """
        if step.omega is None or step.duals is None or st.theta > self.cfg.eps_feas:
            return False
        om = step.omega
        model = float(problem.objective_gradient(st.z) @ om + 0.5 * om @ st.H @ om)
        _, ok = self.scaled_kkt(problem, st.z, step.duals, st.f, om)
        return ok and abs(model) <= self.cfg.eps_opt

    def record(self, st: IterateState, step: _Step | None, status: str, **extra) -> TraceRow:
        row = TraceRow(
            iter=st.k, phase=st.phase, f=st.f, theta=st.theta,
            alpha=step.alpha if step is not None else math.nan,
            soc_used=bool(step.soc) if step is not None else False,
            subproblem_status=status, kkt_scaled=st.kkt, wall_ms=self.ms(), z=st.z.copy(),
            step_inf=float(np.max(np.abs(step.omega))) if step is not None and step.omega is not None else math.nan,
            hess_min_eig=float(np.linalg.eigvalsh(st.H).min()) if st.H.size else math.nan,
            filter_at_accept=step.filter_at_accept if step is not None else None,
            augmented=step.augmented if step is not None else False,
            **extra,
        )
        self.trace.append(row)
        return row

    # -- restoration ---------------------------------------------------------------
    def restore(self, st: IterateState, flt: Filter) -> IterateState | None:
        """Feasibility restoration; returns the restored iterate or None."""
        cfg = self.cfg
        base = self.problem
        self.restorations += 1
        rho = restoration_penalty(st.theta, cfg)
        R = RestorationProblem(base, st.z, rho)
        with self.timer("violation"):
            dist = base.signed_distances(st.z, self.settings)
        w = R.initial_point(st.z, dist)
        lams = R.zero_duals()
        diag = np.concatenate([np.full(base.n, rho), np.full(base.m, 1e-8)])
        H = self.initial_hessian(R, lams, diag)
        fR, tR = self.evaluate(R, w)
        rflt = Filter((), cfg.theta_max_factor * max(1.0, tR))
        theta_min = cfg.theta_min_factor * max(1.0, tR)
        rst = IterateState(w, lams, H, fR, tR, math.nan, 0, RESTORATION)
        self.record(rst, None, "entry", f_orig=st.f, theta_orig=st.theta)
        for _ in range(cfg.max_restoration_iter):
            step = self.iterate(R, rst, rflt, theta_min)
            if step.kind != "accepted":
                self.record(rst, step, step.status)
                return None
            rflt = step.flt
            f_prev = rst.f
            rst = self.advance(R, rst, step)
            z, _ = R.split(rst.z)
            f0, t0 = self.evaluate(base, z)
            self.record(rst, step, step.status, f_orig=f0, theta_orig=t0)
            if t0 <= cfg.eta * st.theta and filter_acceptable(f0, t0, flt):
                return IterateState(z, base.zero_duals(), st.H, f0, t0, math.nan, st.k, MAIN)
            if self.converged(R, rst, step.omega, f_prev):
                return None
        return None

    # -- driver ----------------------------------------------------------------------
    def run(self, z0: np.ndarray) -> SolveOutcome:
        cfg = self.cfg
        P = self.problem
        lams = P.zero_duals()
        f0, t0 = self.evaluate(P, z0)
        H = self.initial_hessian(P, lams)
        flt = Filter((), cfg.theta_max_factor * max(1.0, t0))
        theta_min = cfg.theta_min_factor * max(1.0, t0)
        st = IterateState(np.asarray(z0, dtype=float).copy(), lams, H, f0, t0)
        self.record(st, None, "initial")
        status, message = MAX_ITER, "iteration limit reached"
        while st.k < cfg.max_iter:
            step = self.iterate(P, st, flt, theta_min)
            if step.kind == "accepted":
                flt = step.flt
                f_prev = st.f
                st = self.advance(P, st, step)
                self.record(st, step, step.status)
                if self.converged(P, st, step.omega, f_prev):
                    status, message = OPTIMAL, "scaled KKT conditions satisfied"
                    break
                continue
            flt = step.flt
            if st.theta <= cfg.eps_feas:
                self.record(st, step, step.status)
                if self.null_step(P, st, step):
                    status, message = OPTIMAL, "scaled KKT conditions satisfied (null step)"
                else:
                    status, message = STALLED, f"no acceptable step from a feasible point ({step.status})"
                break
            restored = self.restore(st, flt)
            if restored is None:
                status, message = LOCALLY_INFEASIBLE, "feasibility restoration failed"
                break
            st = restored
            st.k += 1
            self.record(st, None, "restored")
        timings = {k: self.timer.totals.get(k, 0.0)
                   for k in ("subproblem", "line-search", "violation", "hessian")}
        wall = time.perf_counter() - self.t0
        return SolveOutcome(status, st, self.trace, timings, st.k, self.restorations, P, cfg,
                            message, wall)


def solve(problem: NLProblem, init, cfg: SqpConfig | None = None) -> SolveOutcome:
    """Run the sequential quadratic SOS method from ``init``.

    ``init`` is a stacked coefficient vector or, for an :class:`SOSProgram`, a
    mapping from decision variables to coefficient vectors.
    """
    cfg = cfg or SqpConfig()
    if isinstance(init, Mapping):
        if not isinstance(problem, SOSProgram):
            raise TypeError("mapping initial guesses need an SOSProgram")
        z0 = problem.stack(init)
    else:
        z0 = np.asarray(init, dtype=float)
    if z0.shape != (problem.n,):
        raise ValueError(f"initial point has shape {z0.shape}, expected ({problem.n},)")
    return _Engine(problem, cfg).run(z0)
