import numpy as np
import pytest
import scipy.sparse as sp

from sqsos import conic
from sqsos.conic import (PSD, SOC, SQRT2, ConicProblem, ConicSolution, Nonneg, Zero, cone_dim,
                         epigraph_lift, kkt_residuals, smat, svec)


def psd_example():
    # [[1, c], [c, 1]] in svec order (0,0), (0,1), (1,1)
    A = sp.csc_matrix(np.array([[0.0], [-SQRT2], [0.0]]))
    return ConicProblem(None, np.array([1.0]), A, np.array([1.0, 0.0, 1.0]), [PSD(2)])


def certificate_block(rng, kind, size):
    """A complementary pair ``(s, y)``: ``s`` in the cone, ``y`` in its dual, ``s'y = 0``."""
    if kind == "nonneg":
        mask = rng.random(size) < 0.5
        s = np.where(mask, rng.uniform(0.5, 2, size), 0.0)
        y = np.where(mask, 0.0, rng.uniform(0.5, 2, size))
        return s, y
    if kind == "soc":
        u = rng.normal(size=size - 1)
        nu = np.linalg.norm(u)
        return np.concatenate([[nu], u]), rng.uniform(0.5, 2) * np.concatenate([[nu], -u])
    U, _ = np.linalg.qr(rng.normal(size=(size, size)))
    k = size // 2 or 1
    a = np.concatenate([rng.uniform(0.5, 2, k), np.zeros(size - k)])
    b = np.concatenate([np.zeros(k), rng.uniform(0.5, 2, size - k)])
    return svec((U * a) @ U.T), svec((U * b) @ U.T)


def random_instance(rng, kinds):
    """Problem with known optimal value built from a primal-dual certificate."""
    cones, ss, ys = [], [], []
    for kind, size in kinds:
        s, y = certificate_block(rng, kind, size)
        cones.append({"nonneg": Nonneg, "soc": SOC, "psd": PSD}[kind](size))
        ss.append(s)
        ys.append(y)
    s, y = np.concatenate(ss), np.concatenate(ys)
    m = cone_dim(cones)
    n = max(1, m // 2)
    A = rng.normal(size=(m, n))
    x = rng.normal(size=n)
    b = A @ x + s
    q = -A.T @ y
    return ConicProblem(None, q, sp.csc_matrix(A), b, cones), float(q @ x)


KINDS = [
    [("nonneg", 6)],
    [("soc", 5)],
    [("psd", 3)],
    [("nonneg", 3), ("soc", 4)],
    [("psd", 2), ("nonneg", 4)],
    [("soc", 3), ("psd", 4)],
    [("nonneg", 5), ("soc", 3), ("psd", 3)],
]


class TestSvec:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(4, 4))
        Q = M + M.T
        assert np.allclose(smat(svec(Q)), Q)

    def test_inner_product(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(2, 3, 3))
        A, B = A + A.T, B + B.T
        assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))


class TestSolve:
    def test_nonneg_scalar(self):
        p = ConicProblem(None, [1.0], sp.csc_matrix([[-1.0]]), [0.0], [Nonneg(1)])
        sol = conic.solve(p)
        assert sol.status == "optimal" and abs(sol.x[0]) < 1e-8

    def test_psd_2x2(self):
        sol = conic.solve(psd_example())
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(-1.0, abs=1e-8)

    def test_interior_qp(self):
        P = sp.identity(2, format="csc")
        p = ConicProblem(P, [-3.0, -4.0], -sp.identity(2, format="csc"), [0.0, 0.0], [Nonneg(2)])
        sol = conic.solve(p)
        assert np.allclose(sol.x, [3.0, 4.0], atol=1e-7)
        assert conic.objective(p, sol.x) + 12.5 == pytest.approx(0.0, abs=1e-7)

    def test_infeasible(self):
        # x = 1 and x <= 0
        A = sp.csc_matrix([[1.0], [1.0]])
        p = ConicProblem(None, [0.0], A, [1.0, 0.0], [Zero(1), Nonneg(1)])
        assert conic.solve(p).status == "primal-infeasible"

    def test_unbounded(self):
        p = ConicProblem(None, [-1.0], sp.csc_matrix([[-1.0]]), [0.0], [Nonneg(1)])
        assert conic.solve(p).status == "dual-infeasible"

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            ConicProblem(None, [1.0], sp.csc_matrix([[1.0]]), [0.0, 0.0], [Nonneg(2)])
        with pytest.raises(ValueError):
            ConicProblem(sp.csc_matrix([[0.0, 1.0], [0.0, 0.0]]), [0.0, 0.0],
                         sp.csc_matrix((0, 2)), [], [])


class TestCertificates:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_known_optimum(self, seed):
        rng = np.random.default_rng(seed)
        prob, opt = random_instance(rng, KINDS[seed % len(KINDS)])
        sol = conic.solve(prob)
        assert sol.status == "optimal"
        scale = 1 + abs(opt)
        assert abs(sol.primal_objective - sol.dual_objective) <= 1e-8 * scale
        assert abs(sol.primal_objective - opt) <= 1e-7 * scale
        res = kkt_residuals(prob, sol)
        assert res.cone_primal <= 1e-8 and res.cone_dual <= 1e-8


class TestDuality:
    @pytest.mark.parametrize("seed", range(5))
    def test_lp_dual_value(self, seed):
        # primal: min c'x, Ax <= b;  dual: min b'y, -A'y = c, y >= 0 has value -primal
        rng = np.random.default_rng(100 + seed)
        prob, opt = random_instance(rng, [("nonneg", 8)])
        primal = conic.solve(prob)
        A = prob.A.toarray()
        m = A.shape[0]
        Ad = np.vstack([-A.T, -np.eye(m)])
        dual = ConicProblem(None, prob.b, sp.csc_matrix(Ad), np.concatenate([prob.q, np.zeros(m)]),
                            [Zero(A.shape[1]), Nonneg(m)])
        dsol = conic.solve(dual)
        assert dsol.primal_objective == pytest.approx(-primal.primal_objective, abs=1e-7)

    def test_psd_slack_eigenvalues(self):
        sol = conic.solve(psd_example())
        assert np.linalg.eigvalsh(smat(sol.s)).min() >= -1e-8


class TestResiduals:
    def test_optimal_small(self):
        prob = psd_example()
        res = kkt_residuals(prob, conic.solve(prob))
        assert res.max() <= 1e-8

    def test_perturbation_linear(self):
        prob = psd_example()
        sol = conic.solve(prob)
        bad = ConicSolution(sol.x + 1e-3, sol.y, sol.s, sol.status)
        assert kkt_residuals(prob, bad).primal == pytest.approx(SQRT2 * 1e-3, rel=1e-3)

    def test_empty(self):
        prob = ConicProblem(sp.identity(1, format="csc"), [0.0], sp.csc_matrix((0, 1)), [], [])
        sol = conic.solve(prob)
        res = kkt_residuals(prob, sol)
        assert res.max() == 0.0


class TestEpigraph:
    def test_scalar(self):
        prob = ConicProblem(sp.csc_matrix([[1.0]]), [0.0], sp.csc_matrix((0, 1)), [], [])
        lifted = epigraph_lift(prob)
        assert lifted.cones[-1] == SOC(3)
        sol = conic.solve(lifted)
        assert abs(sol.x[0]) < 1e-6

    def test_zero_cost_rejected(self):
        with pytest.raises(ValueError):
            epigraph_lift(psd_example())

    @pytest.mark.parametrize("seed", range(5))
    def test_random_qp_agrees(self, seed):
        rng = np.random.default_rng(seed)
        n = 4
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.1 * np.eye(n)
        q = rng.normal(size=n)
        prob = ConicProblem(sp.csc_matrix(P), q, -sp.identity(n, format="csc"), np.zeros(n), [Nonneg(n)])
        direct = conic.solve(prob)
        lifted = conic.solve(epigraph_lift(prob))
        x = lifted.x[:n]
        assert conic.objective(prob, x) == pytest.approx(direct.primal_objective, abs=1e-7)


class TestDump:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        prob, _ = random_instance(rng, KINDS[-1])
        again = conic.load_problem(conic.dump_problem(prob))
        assert again.cones == prob.cones
        assert np.allclose(again.A.toarray(), prob.A.toarray())
        assert np.allclose(again.b, prob.b) and np.allclose(again.q, prob.q)
