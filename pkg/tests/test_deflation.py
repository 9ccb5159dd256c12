"""Deflation operator values, gradients, and the Sherman-Morrison scaling."""

import numpy as np
import pytest
import scipy.sparse as sp

from defbar.deflation import (
    DeflatedPointError,
    DeflationBreakdownError,
    DeflationOperator,
    deflate_update,
    m_gradient,
    m_value,
)
from defbar.mesh import RectangleSpec, build_rect_mesh
from defbar import fem


def unit_square_mass(n=4):
    mesh = build_rect_mesh(RectangleSpec(1.0, 1.0, n, n, "right"))
    space = fem.FunctionSpace("P1_scalar", mesh)
    return fem.scalar_mass(space), space.num_scalar_dofs


def make_op(gram, n, stored=()):
    op = DeflationOperator(gram=gram, rho_slice=slice(0, n))
    for s in stored:
        op.add(np.asarray(s, dtype=float))
    return op


class TestMValue:
    def test_empty_operator_identity(self):
        M, n = unit_square_mass()
        op = make_op(M, n)
        assert m_value(op, np.random.default_rng(0).random(n)) == 1.0

    def test_single_solution_hand_value(self):
        # constant offset c over the unit square: ||c||_{L2}^2 = c^2
        M, n = unit_square_mass()
        rho1 = np.full(n, 0.2)
        op = make_op(M, n, [rho1])
        z = np.full(n, 0.7)  # distance 0.5 in L2
        assert m_value(op, z) == pytest.approx(1.0 / 0.25 + 1.0, rel=1e-12)

    def test_two_solutions_product(self):
        M, n = unit_square_mass()
        op = make_op(M, n, [np.zeros(n), np.full(n, 2.0)])
        z = np.full(n, 1.0)  # L2 distance 1 to both
        assert m_value(op, z) == pytest.approx(4.0, rel=1e-12)

    def test_deflated_point_error(self):
        M, n = unit_square_mass()
        rho1 = np.linspace(0, 1, n)
        op = make_op(M, n, [rho1])
        with pytest.raises(DeflatedPointError):
            m_value(op, rho1.copy())

    def test_lower_bound_and_blowup(self):
        # D1/D2: m >= sigma^k and m -> inf approaching a stored solution
        M, n = unit_square_mass()
        rng = np.random.default_rng(1)
        sols = [rng.random(n), rng.random(n)]
        op = make_op(M, n, sols)
        for _ in range(20):
            z = rng.random(n) * 2 - 0.5
            assert m_value(op, z) >= 1.0
        z_near = sols[0] + 1e-8
        assert m_value(op, z_near) > 1e10


class TestMGradient:
    def test_empty_gradient_zero(self):
        M, n = unit_square_mass()
        op = make_op(M, n)
        np.testing.assert_array_equal(m_gradient(op, np.ones(n)), 0.0)

    def test_fd_consistency(self):
        M, n = unit_square_mass()
        rng = np.random.default_rng(3)
        op = make_op(M, n, [rng.random(n), rng.random(n)])
        z = rng.random(n) + 0.5
        g = m_gradient(op, z)
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        errs = []
        for h in (1e-6, 1e-7):
            fd = (m_value(op, z + h * d) - m_value(op, z)) / h
            errs.append(abs(fd - g @ d) / max(abs(g @ d), 1e-30))
        assert min(errs) < 1e-5

    def test_orthogonal_direction_zero_derivative(self):
        M, n = unit_square_mass()
        rng = np.random.default_rng(5)
        rho1 = rng.random(n)
        op = make_op(M, n, [rho1])
        z = rng.random(n) + 1.0
        w = M @ (z - rho1)
        d = rng.standard_normal(n)
        d -= (d @ w) / (w @ w) * w  # now M(rho-rho1) . d = 0
        g = m_gradient(op, z)
        assert abs(g @ d) < 1e-12 * np.linalg.norm(g) * np.linalg.norm(d) + 1e-14

    def test_single_solution_formula(self):
        M, n = unit_square_mass()
        rng = np.random.default_rng(7)
        rho1 = rng.random(n)
        op = make_op(M, n, [rho1])
        z = rng.random(n) + 0.3
        d2 = float((z - rho1) @ (M @ (z - rho1)))
        expect = -2.0 * d2 ** (-2.0) * (M @ (z - rho1))
        np.testing.assert_allclose(m_gradient(op, z), expect, rtol=1e-12)


class TestDeflateUpdate:
    def test_orthogonal_update_unscaled(self):
        M, n = unit_square_mass()
        rng = np.random.default_rng(11)
        rho1 = rng.random(n)
        op = make_op(M, n, [rho1])
        z = rng.random(n) + 0.3
        g = m_gradient(op, z)
        dy = rng.standard_normal(n)
        dy -= (dy @ g) / (g @ g) * g
        np.testing.assert_allclose(deflate_update(dy, op, z), dy, rtol=1e-12, atol=1e-15)

    def test_hand_scaling(self):
        # m = 5, (m')^T dy = 2.5: factor = 1 + 0.5/(1-0.5) = 2
        class FakeOp(DeflationOperator):
            def m_value(self, z):
                return 5.0

            def m_gradient(self, z):
                g = np.zeros_like(z)
                g[0] = 2.5
                return g

            def is_empty(self):
                return False

        op = FakeOp(gram=sp.identity(2, format="csr"), rho_slice=slice(0, 2))
        dy = np.array([1.0, 3.0])
        np.testing.assert_allclose(deflate_update(dy, op, np.zeros(2)), 2.0 * dy, rtol=1e-14)

    def test_empty_operator_identity(self):
        op = make_op(sp.identity(3, format="csr"), 3)
        dy = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(deflate_update(dy, op, np.zeros(3)), dy)

    def test_breakdown_error(self):
        class FakeOp(DeflationOperator):
            def m_value(self, z):
                return 2.0

            def m_gradient(self, z):
                return np.array([2.0])

            def is_empty(self):
                return False

        op = FakeOp(gram=sp.identity(1, format="csr"), rho_slice=slice(0, 1))
        with pytest.raises(DeflationBreakdownError):
            deflate_update(np.array([1.0]), op, np.zeros(1))

    def test_collinearity(self):
        M, n = unit_square_mass()
        rng = np.random.default_rng(13)
        op = make_op(M, n, [rng.random(n)])
        z = rng.random(n) + 0.4
        dy = rng.standard_normal(n)
        dz = deflate_update(dy, op, z)
        cross = dz - (dz @ dy) / (dy @ dy) * dy
        assert np.linalg.norm(cross) <= 1e-12 * np.linalg.norm(dz)


class TestScalingEquivalence:
    def test_newton_step_on_assembled_deflated_residual(self):
        """One Newton step on m(z)F(z) with a dense product-rule Jacobian equals
        the Sherman-Morrison-scaled undeflated step (20-dof nonlinear system)."""
        n = 20
        rng = np.random.default_rng(17)
        B = rng.standard_normal((n, n))
        A = B @ B.T + n * np.eye(n)
        b = rng.standard_normal(n)

        def F(z):
            return A @ z + 0.1 * z**3 - b

        def J(z):
            return A + np.diag(0.3 * z**2)

        gram = sp.identity(n, format="csr")
        op = DeflationOperator(gram=gram, rho_slice=slice(0, n))
        op.add(rng.standard_normal(n))

        z = rng.standard_normal(n)
        m = op.m_value(z)
        mg = op.m_gradient(z)
        G_jac = m * J(z) + np.outer(F(z), mg)
        dz_direct = np.linalg.solve(G_jac, -m * F(z))

        dy = np.linalg.solve(J(z), -F(z))
        dz_scaled = deflate_update(dy, op, z)
        np.testing.assert_allclose(dz_scaled, dz_direct, rtol=1e-8)
