"""HIK/BM active-set solvers: classification, steps, NCP residual, equivalence."""

import numpy as np
import pytest
import scipy.sparse as sp

from defbar.activeset import (
    Bounds,
    InconsistentDualsError,
    InfeasibleIterateError,
    MCPSystem,
    bm_classify,
    bm_step,
    hik_classify,
    hik_step,
    ncp_residual,
    project_box,
    solve_mcp,
)
from defbar.problems import (
    ObstacleParams,
    obstacle_bruteforce_solution,
    obstacle_equivalence_report,
    obstacle_matrix,
    obstacle_qp,
)


def box01(n, eps=0.0):
    return Bounds(np.zeros(n), np.ones(n), eps=eps)


def linear_system(A, b, bounds):
    A = sp.csr_matrix(A)
    return MCPSystem(residual=lambda z: A @ z - b, jacobian=lambda z: A, bounds=bounds)


class TestNCPResidual:
    def test_exact_kkt_point(self):
        # z at lower bound, F = 1, lambda_a = 1: all three blocks vanish
        sys_ = linear_system(np.eye(1), np.array([-1.0]), box01(1))
        z = np.zeros(1)
        la, lb = np.array([1.0]), np.array([0.0])
        assert ncp_residual(z, la, lb, sys_) == pytest.approx(0.0, abs=1e-15)

    def test_complementary_pair(self):
        # phi(1, 0) = 1 - (1)_+ = 0
        sys_ = linear_system(np.eye(1), np.array([-1.0]), box01(1))
        r = ncp_residual(np.zeros(1), np.array([1.0]), np.array([0.0]), sys_)
        assert r == pytest.approx(0.0, abs=1e-15)

    def test_hand_phi_value(self):
        # lambda_a = 0.5, z - a = 0.2: phi = 0.5 - 0.3 = 0.2
        A = sp.csr_matrix(np.zeros((1, 1)))
        sys_ = MCPSystem(lambda z: np.array([0.5]), lambda z: A, box01(1))
        r = ncp_residual(np.array([0.2]), np.array([0.5]), np.array([0.0]), sys_)
        # blocks: F - la + lb = 0, phi_a = 0.2, phi_b = 0
        assert r == pytest.approx(0.2, rel=1e-12)


class TestClassification:
    def test_hik_lower_active(self):
        b = box01(1)
        part = hik_classify(np.array([0.1]), np.array([0.2]), np.array([0.0]), b)
        assert part.lower[0] and not part.upper[0]

    def test_hik_boundary_tie_inactive(self):
        b = box01(1)
        part = hik_classify(np.array([0.0]), np.array([0.0]), np.array([0.0]), b)
        assert not part.lower[0] and not part.upper[0]

    def test_unbounded_always_inactive(self):
        b = Bounds(np.array([-np.inf]), np.array([np.inf]))
        part = hik_classify(np.array([5.0]), np.array([9.0]), np.array([9.0]), b)
        assert part.inactive[0]

    def test_inconsistent_duals(self):
        b = box01(1)
        with pytest.raises(InconsistentDualsError):
            hik_classify(np.array([0.5]), np.array([2.0]), np.array([2.0]), b)

    def test_bm_rules(self):
        b = box01(3)
        z = np.array([0.0, 0.0, 0.5])
        F = np.array([1.0, -1.0, 7.0])
        part = bm_classify(z, F, b)
        assert part.lower.tolist() == [True, False, False]
        assert part.inactive.tolist() == [False, True, True]

    def test_bm_infeasible_raises(self):
        with pytest.raises(InfeasibleIterateError):
            bm_classify(np.array([1.2]), np.array([0.0]), box01(1))


class TestProjectBox:
    def test_clamp(self):
        b = box01(3)
        out = project_box(np.array([1.2, 0.5, -0.1]), b)
        np.testing.assert_array_equal(out, [1.0, 0.5, 0.0])

    def test_feasible_unchanged(self):
        b = box01(3)
        z = np.array([0.0, 0.3, 1.0])
        np.testing.assert_array_equal(project_box(z, b), z)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        b = box01(20)
        z = rng.standard_normal(20) * 3
        once = project_box(z, b)
        np.testing.assert_array_equal(project_box(once, b), once)


class TestHIKStep:
    def test_linear_unconstrained_one_step(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
        b = rng.standard_normal(4)
        bounds = Bounds(np.full(4, -np.inf), np.full(4, np.inf))
        sys_ = linear_system(A, b, bounds)
        z = np.zeros(4)
        step = hik_step(sys_, z, np.zeros(4), np.zeros(4))
        np.testing.assert_allclose(A @ step.z, b, atol=1e-12)

    def test_1d_overshoot_then_bound(self):
        # F(z) = z - 2 on [0,1]: first step overshoots to 2, classification
        # then drives z to the upper bound with lambda_b = 1
        bounds = box01(1)
        sys_ = linear_system(np.eye(1), np.array([2.0]), bounds)
        z = np.array([0.5])
        la = np.zeros(1)
        lb = np.zeros(1)
        s1 = hik_step(sys_, z, la, lb)
        assert s1.z[0] == pytest.approx(2.0, abs=1e-14)
        s2 = hik_step(sys_, s1.z, s1.lam_a, s1.lam_b)
        assert s2.z[0] == pytest.approx(1.0, abs=1e-14)
        assert s2.lam_b[0] == pytest.approx(1.0, abs=1e-14)
        # KKT: F(1) + la - lb = -1 + 0 + 1 = 0
        assert ncp_residual(s2.z, s2.lam_a, s2.lam_b, sys_) == pytest.approx(0.0, abs=1e-12)

    def test_active_dofs_land_on_bounds(self):
        rng = np.random.default_rng(4)
        n = 12
        B = rng.standard_normal((n, n))
        A = B @ B.T + n * np.eye(n)
        b = rng.standard_normal(n) * 10
        bounds = box01(n)
        sys_ = linear_system(A, b, bounds)
        res = solve_mcp(sys_, np.full(n, 0.5), solver="hik", tol=1e-10, max_iter=50)
        assert res.converged
        part = hik_classify(res.z, res.lam_a, res.lam_b, bounds)
        assert np.all(res.z[part.lower] == 0.0)
        assert np.all(res.z[part.upper] == 1.0)


class TestBMStep:
    def test_linear_inactive_one_step(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((5, 5)) + 5 * np.eye(5)
        x_star = rng.uniform(0.2, 0.8, 5)
        b = A @ x_star
        sys_ = linear_system(A, b, box01(5))
        step = bm_step(sys_, np.full(5, 0.5))
        np.testing.assert_allclose(step.z, x_star, atol=1e-12)

    def test_frozen_at_bound(self):
        # z at lower bound with F > 0 is active: dz = 0 there
        A = np.eye(2)
        b = np.array([-1.0, 0.5])
        sys_ = linear_system(A, b, box01(2))
        step = bm_step(sys_, np.array([0.0, 0.0]))
        assert step.z[0] == 0.0
        assert step.z[1] == pytest.approx(0.5, abs=1e-14)

    def test_iterates_feasible(self):
        rng = np.random.default_rng(9)
        n = 15
        B = rng.standard_normal((n, n))
        A = B @ B.T + 2 * np.eye(n)
        b = rng.standard_normal(n) * 20
        bounds = box01(n)
        sys_ = linear_system(A, b, bounds)
        z = np.full(n, 0.5)
        for _ in range(15):
            step = bm_step(sys_, z)
            z = step.z
            assert bounds.feasible(z)


class TestSolveMCP:
    def test_interior_quadratic_fast(self):
        # F(z) = z - 0.4 on [0,1]: interior solution in <= 2 iterations
        sys_ = linear_system(np.eye(3), np.full(3, 0.4), box01(3))
        res = solve_mcp(sys_, np.full(3, 0.8), solver="bm", tol=1e-12, max_iter=10)
        assert res.converged and res.iterations <= 2
        np.testing.assert_allclose(res.z, 0.4, atol=1e-12)

    def test_nonconvergence_signal(self):
        # an infeasible fixed point: F = +1 everywhere but z interior cannot settle
        A = sp.csr_matrix(np.zeros((1, 1)))
        sys_ = MCPSystem(lambda z: np.array([1.0]), lambda z: sp.identity(1, format="csr") * 0.0,
                         box01(1))
        res = solve_mcp(sys_, np.array([0.5]), solver="bm", tol=1e-12, max_iter=3)
        assert not res.converged

    def test_deflated_start_at_root_nonconverges(self):
        from defbar.deflation import DeflationOperator

        A = np.eye(2)
        b = np.array([0.3, 0.6])
        sys_ = linear_system(A, b, box01(2))
        op = DeflationOperator(gram=sp.identity(2, format="csr"), rho_slice=slice(0, 2))
        op.add(np.array([0.3, 0.6]))
        res = solve_mcp(sys_, np.array([0.3, 0.6]), solver="bm", tol=1e-10,
                        max_iter=8, deflation=op)
        assert not res.converged


class TestObstacleQP:
    def test_fully_inactive(self):
        n = 12
        A = obstacle_matrix(n)
        f = np.full(n, 100.0)
        params = ObstacleParams(n=n, f=f, phi=np.zeros(n))
        sys_ = obstacle_qp(params)
        res = solve_mcp(sys_, np.zeros(n), solver="bm", tol=1e-9, max_iter=30)
        assert res.converged
        import scipy.sparse.linalg as spla

        np.testing.assert_allclose(res.z, spla.spsolve(A.tocsc(), f), rtol=1e-10)

    def test_fully_active(self):
        n = 9
        params = ObstacleParams(n=n, f=np.full(n, -1.0), phi=np.zeros(n))
        sys_ = obstacle_qp(params)
        for solver in ("bm", "hik"):
            res = solve_mcp(sys_, np.zeros(n), solver=solver, tol=1e-12, max_iter=30)
            assert res.converged
            np.testing.assert_allclose(res.z, 0.0, atol=1e-14)
            np.testing.assert_allclose(res.lam_a, 1.0, atol=1e-12)

    @pytest.mark.parametrize("n", [6, 8, 10])
    def test_against_bruteforce_oracle(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(5):
            f = rng.standard_normal(n) * 40
            phi = np.zeros(n)
            params = ObstacleParams(n=n, f=f, phi=phi)
            y_ref, lam_ref = obstacle_bruteforce_solution(params)
            sys_ = obstacle_qp(params)
            for solver in ("bm", "hik"):
                res = solve_mcp(sys_, np.maximum(phi, 0.0), solver=solver,
                                tol=1e-11, max_iter=60)
                assert res.converged, f"{solver} failed n={n}"
                np.testing.assert_allclose(res.z, y_ref, atol=1e-9)


class TestHalfStepEquivalence:
    def test_equivalence_random_loads(self):
        rng = np.random.default_rng(2024)
        checked = 0
        worst_e2 = worst_e3 = 0.0
        for n in (8, 16, 24, 32, 48, 64):
            for _ in range(4):
                f = rng.standard_normal(n) * 50
                rep = obstacle_equivalence_report(ObstacleParams(n=n, f=f, phi=np.zeros(n)))
                checked += rep.aligned_iterations
                worst_e2 = max(worst_e2, rep.max_update_discrepancy)
                worst_e3 = max(worst_e3, rep.max_halfstep_discrepancy)
                assert rep.hik_converged and rep.bm_converged
        assert checked > 0
        assert worst_e2 <= 1e-10
        assert worst_e3 <= 1e-10
