import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import toy_program
from sqsos.engine import (LOCALLY_INFEASIBLE, OPTIMAL, Constraint, Filter, SOSProgram, SqpConfig,
                          armijo, augment_filter, build_subproblem, damped_bfgs, envelope_progress,
                          f_type_switch, filter_acceptable, regularize, restoration_penalty,
                          scaled_termination, solve, solve_subproblem)
from sqsos.engine.filter import dominates
from sqsos.engine.hessian import gershgorin_shift
from sqsos.expr import DecisionVar, sqnorm_diff
from sqsos.poly import Polynomial

CFG = SqpConfig()


def non_dominated(flt):
    es = list(flt.entries)
    return not any(i != j and dominates(a, b) for i, a in enumerate(es) for j, b in enumerate(es))


class TestFilter:
    def test_f_branch(self):
        assert filter_acceptable(0.9, 0.7, Filter(((1.0, 0.5),)))

    def test_dominated(self):
        assert not filter_acceptable(1.2, 0.6, Filter(((1.0, 0.5),)))

    def test_empty(self):
        assert filter_acceptable(1e9, 1e9, Filter())

    def test_violation_cap(self):
        assert not filter_acceptable(0.0, 2.0, Filter((), theta_max=1.0))

    def test_augment_incomparable(self):
        flt = augment_filter(Filter(((0.9, 0.7),)), theta=0.5, f=1.0)
        assert set(flt.entries) == {(0.9, 0.7), (1.0, 0.5)}

    def test_augment_prunes(self):
        flt = augment_filter(Filter(((0.9, 0.7),)), theta=0.4, f=0.8)
        assert flt.entries == ((0.8, 0.4),)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 10)), max_size=30))
    def test_non_domination(self, pairs):
        flt = Filter()
        for f, t in pairs:
            flt = augment_filter(flt, t, f)
            assert non_dominated(flt)
        # every inserted pair stays forbidden
        for f, t in pairs:
            assert not filter_acceptable(f, t, flt)


class TestSwitching:
    def test_zero_violation(self):
        assert f_type_switch(-1.0, 1.0, 0.0, CFG)

    def test_ascent(self):
        assert not f_type_switch(1.0, 1.0, 0.0, CFG)

    def test_direct(self):
        # 1 * 0.1^2 = 0.01 against 0.5^0.9 = 0.536
        assert not f_type_switch(-0.1, 1.0, 0.5, CFG)

    def test_armijo(self):
        assert armijo(1.0, 1.0 - 1e-4, -1.0, 1.0, CFG)
        assert not armijo(1.0, 1.0 - 0.9e-4, -1.0, 1.0, CFG)
        assert armijo(1.0, 1.0, 0.0, 1.0, CFG) and not armijo(1.0, 1.0 + 1e-12, 0.0, 1.0, CFG)

    def test_envelope(self):
        assert envelope_progress(1.0, 0.0, 5.0, 0.9, CFG)
        assert envelope_progress(0.0, 1.0, 1.0, 3.0, CFG)
        assert not envelope_progress(0.0, 1.0, 1.0 + 1e-9, 3.0, CFG)
        # required drop is gamma_f * theta_k = 1e-11
        assert envelope_progress(1e-6, 1.0, 1.0 - 1e-10, 1e-6, CFG)
        assert not envelope_progress(1e-6, 1.0, 1.0 - 1e-12, 1e-6, CFG)


class TestPenalty:
    def test_values(self):
        assert restoration_penalty(1e-7, CFG) == 1.0
        assert restoration_penalty(1e-2, CFG) == pytest.approx(0.0101)
        assert restoration_penalty(1e12, CFG) == pytest.approx(0.01)

    def test_negative(self):
        with pytest.raises(ValueError):
            restoration_penalty(-1.0, CFG)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"rho_armijo": 0.0}, {"gamma_f": 0.0}, {"gamma_theta": 0.0},
                                    {"s_theta": 1.0}, {"rho_min": 2.0}, {"hessian": "newton"},
                                    {"max_iter": 0}])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            SqpConfig(**kw)

    def test_round_trip(self):
        cfg = SqpConfig(hessian="exact-mirrored", max_iter=7)
        assert SqpConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            SqpConfig.from_dict({"nope": 1})


class TestHessian:
    def test_standard_bfgs_branch(self):
        B = np.eye(2)
        s = np.array([1.0, 0.0])
        y = np.array([2.0, 0.5])
        expected = B - np.outer(B @ s, B @ s) / (s @ B @ s) + np.outer(y, y) / (s @ y)
        assert np.allclose(damped_bfgs(B, s, y), expected)

    def test_degenerate_step(self):
        B = np.diag([1.0, 3.0])
        assert damped_bfgs(B, np.zeros(2), np.ones(2)) is B

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_stays_positive_definite(self, seed):
        rng = np.random.default_rng(seed)
        B = np.eye(4)
        for _ in range(10):
            s, y = rng.normal(size=(2, 4))
            B = damped_bfgs(B, s, y)
            assert np.allclose(B, B.T)
            assert np.linalg.eigvalsh(B).min() > 0

    def test_gershgorin(self):
        H = np.array([[0.0, 2.0], [2.0, 0.0]])
        assert gershgorin_shift(H) >= 2.0
        # eigvalsh is backward stable: allow eps * ||H||
        assert np.linalg.eigvalsh(regularize(H, "exact-gershgorin")).min() >= 1e-8 - 1e-15 * 4

    def test_mirrored_and_min_frobenius(self):
        H = np.diag([3.0, -2.0, 0.0])
        assert np.allclose(np.diag(regularize(H, "exact-mirrored")), [3.0, 2.0, 1e-8])
        assert np.allclose(np.diag(regularize(H, "exact-min-frobenius")), [3.0, 1e-8, 1e-8])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["exact-gershgorin", "exact-mirrored",
                                                       "exact-min-frobenius"]))
    def test_regularized_pd(self, seed, mode):
        M = np.random.default_rng(seed).normal(size=(5, 5))
        H = regularize(M + M.T, mode)
        assert np.linalg.eigvalsh(H).min() >= 1e-8 - 1e-15 * np.abs(H).sum()


class TestTermination:
    def test_kkt_point(self):
        assert scaled_termination(np.zeros(3), 1.0, 0.0, np.ones(3), CFG)[1]

    def test_large_gradient(self):
        assert not scaled_termination(np.array([1.0]), 0.0, 0.0, np.array([1.0]), CFG)[1]

    def test_toy_solution(self, toy):
        prog, u, v = toy
        z = np.array([1.0, 1.0])
        lams = [np.array([2.0]), np.array([0.0])]
        grad = prog.lagrangian_gradient(z, lams)
        assert np.abs(grad).max() == 0.0
        assert scaled_termination(grad, prog.objective(z), prog.complementarity(z, lams), np.zeros(2), CFG)[1]


class TestSubproblem:
    def test_hand_linearization(self, toy):
        prog, u, v = toy
        z = np.array([2.0, 2.0])
        vals, jacs = prog.values(z), prog.jacobians(z)
        # uv - 1 ~ 3 + 2(u - 2) + 2(v - 2)
        assert vals[0].tolist() == [3.0]
        assert jacs[0].toarray().tolist() == [[2.0, 2.0]]

    def test_fixed_point_at_kkt(self, toy):
        prog, u, v = toy
        z = np.array([1.0, 1.0])
        # multiplier of uv >= 1 at (1, 1) is 2; the exact Hessian [[2,-2],[-2,2]] is
        # singular, so use the regularised matrix the engine would use
        lams = [np.array([2.0]), np.array([0.0])]
        H = regularize(prog.lagrangian_hessian(lams), "exact-min-frobenius")
        res = solve_subproblem(build_subproblem(prog, z, H), SqpConfig(subproblem_tol=1e-12).conic_settings())
        assert res.ok and np.abs(res.step).max() <= 1e-8

    def test_convex_quadratic_one_step(self):
        c = DecisionVar.scalar("c")
        cr = c.ref()
        prog = SOSProgram((cr - 3.0) * (cr - 3.0), [Constraint(cr - 1.0)], variables=[c])
        out = solve(prog, {c: [0.0]}, SqpConfig(hessian="exact-min-frobenius"))
        assert out.status == OPTIMAL
        assert out.main_trace()[1].z[0] == pytest.approx(3.0, abs=1e-7)


class TestSecondOrderCorrection:
    def test_affine_shift_zero(self):
        c = DecisionVar.scalar("c")
        V = DecisionVar.polynomial("V", 1, 0, 2)
        x = Polynomial.variable(1, 0)
        prog = SOSProgram(c.ref() * c.ref(), [Constraint(V.ref() - c.ref() * (x * x))], variables=[c, V])
        rng = np.random.default_rng(0)
        z, om = rng.normal(size=(2, prog.n))
        shift = [a - b - J @ om for a, b, J in zip(prog.values(z + om), prog.values(z), prog.jacobians(z))]
        assert max(np.abs(s).max() for s in shift) <= 1e-12

    def test_bilinear_correction_reduces_violation(self, toy):
        prog, u, v = toy
        z = np.array([1.2, 1.0])
        H = np.eye(2)
        vals, jacs = prog.values(z), prog.jacobians(z)
        res = solve_subproblem(build_subproblem(prog, z, H, vals, jacs))
        om = res.step
        # linearisation overestimates uv when the step components differ in sign
        assert om[0] * om[1] < 0
        shift = [a - b - J @ om for a, b, J in zip(prog.values(z + om), vals, jacs)]
        soc = solve_subproblem(build_subproblem(prog, z, H, vals, jacs, soc_shift=shift))
        theta_plain = prog.violation(z + om, CFG.violation).theta
        theta_soc = prog.violation(z + soc.step, CFG.violation).theta
        assert theta_plain > 0
        assert theta_soc < theta_plain


class TestSolve:
    def test_toy_exact(self, toy):
        prog, u, v = toy
        out = solve(prog, {u: [2.0], v: [2.0]}, SqpConfig(hessian="exact-min-frobenius"))
        assert out.status == OPTIMAL and out.iterations <= 10
        assert np.allclose(out.z, [1.0, 1.0], atol=1e-4)
        assert out.state.f == pytest.approx(2.0, abs=1e-4)
        # brute force over the feasible region
        g = np.linspace(0.01, 3, 600)
        U, W = np.meshgrid(g, g)
        F = np.where(U * W >= 1, U**2 + W**2, np.inf)
        assert out.state.f <= F.min() + 1e-4

    def test_quadratic_rate(self, toy):
        prog, u, v = toy
        cfg = SqpConfig(hessian="exact-min-frobenius", eps_opt=1e-10, subproblem_tol=1e-12)
        out = solve(prog, {u: [2.0], v: [2.0]}, cfg)
        rows = out.main_trace()
        errs = []
        for r in rows:
            errs.append(np.linalg.norm(r.z - 1.0))
            if errs[-1] < 1e-12:  # at the floating-point floor
                break
        assert all(r.alpha == 1.0 for r in rows[1:len(errs)])
        ratios = [math.log(b) / math.log(a) for a, b in zip(errs, errs[1:])]
        assert len(ratios) >= 3
        assert min(ratios[-3:]) >= 1.8

    def test_bfgs_superlinear(self, toy):
        prog, u, v = toy
        out = solve(prog, {u: [2.0], v: [2.0]}, SqpConfig())
        assert out.status == OPTIMAL
        errs = [np.linalg.norm(r.z - 1.0) for r in out.main_trace()]
        ratios = [b / a for a, b in zip(errs, errs[1:]) if a > 1e-9]
        assert min(ratios) < 0.1

    def test_objective_change_at_termination(self, toy):
        prog, u, v = toy
        out = solve(prog, {u: [2.0], v: [2.0]}, SqpConfig())
        rows = out.main_trace()
        assert abs(rows[-1].f - rows[-2].f) <= out.config.eps_opt

    def test_infeasible_by_construction(self):
        s = DecisionVar.sos("s", 1, 0, 2)
        prog = SOSProgram(sqnorm_diff(s.ref(), 0.0), [Constraint(-1.0 - s.ref(), "-1 - s")], variables=[s])
        out = solve(prog, {s: [1.0, 0.0, 1.0]}, SqpConfig())
        assert out.status == LOCALLY_INFEASIBLE
        assert out.restorations >= 1

    def test_bad_init_shape(self, toy):
        prog, _, _ = toy
        with pytest.raises(ValueError):
            solve(prog, np.zeros(3))


class TestVanDerPol:
    def test_optimal(self, vdp_outcome):
        assert vdp_outcome.status == OPTIMAL
        assert vdp_outcome.state.theta <= 1e-6
        rows = vdp_outcome.main_trace()
        assert abs(rows[-1].f - rows[-2].f) <= vdp_outcome.config.eps_opt

    def test_filter_replay(self, vdp_outcome):
        for r in vdp_outcome.trace:
            if r.filter_at_accept is not None:
                assert filter_acceptable(r.f, r.theta, r.filter_at_accept)
                assert non_dominated(r.filter_at_accept)

    def test_soc_only_at_unit_step(self, vdp_outcome):
        assert all(r.alpha == 1.0 for r in vdp_outcome.trace if r.soc_used)

    def test_hessians_positive_definite(self, vdp_outcome):
        eigs = [r.hess_min_eig for r in vdp_outcome.trace if not math.isnan(r.hess_min_eig)]
        assert eigs and min(eigs) > 0

    def test_bad_initial_guess_restores(self):
        from sqsos.bench.problems import build, load_bundled
        pf = load_bundled("vdp_roa")
        pf.init = dict(pf.init, method="negative-definite")
        built = build(pf)
        out = solve(built.program, built.init, SqpConfig.from_dict(pf.solver))
        assert out.restorations >= 1
        entries = [r for r in out.trace if r.subproblem_status == "entry"]
        restored = [r for r in out.trace if r.subproblem_status == "restored"]
        assert len(restored) == len(entries) or out.status == LOCALLY_INFEASIBLE
        eta = out.config.eta
        for e, r in zip(entries, restored):
            assert r.theta <= eta * e.theta_orig
