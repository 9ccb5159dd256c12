"""Secant, tangent, and feasible tangent predictors."""

import numpy as np
import pytest
import scipy.sparse as sp

from defbar.activeset import Bounds
from defbar.fem import barrier_curvature, barrier_gradient, barrier_mu_derivative
from defbar.predictor import (
    PredictorKind,
    feasible_tangent_predict,
    secant_predict,
    tangent_predict,
)

EPS = 1e-5
TARGET = np.array([2.0, -1.0])  # pulls z1 to the upper bound, z2 to the lower


def qp_residual(z, mu):
    return (z - TARGET) + barrier_gradient(z, mu, EPS)


def qp_jacobian(z, mu):
    return sp.csr_matrix(np.diag(1.0 + barrier_curvature(z, mu, EPS)))


def qp_dF_dmu(z):
    return barrier_mu_derivative(z, EPS)


def central_path_point(mu):
    """High-accuracy solve of the two decoupled scalar path equations by bisection."""
    out = np.empty(2)
    for i, t in enumerate(TARGET):
        lo, hi = -EPS + 1e-14, 1.0 + EPS - 1e-14

        def f(r):
            return (r - t) + mu * (-1.0 / (r + EPS) + 1.0 / (1.0 + EPS - r))

        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(lo) * f(mid) <= 0:
                hi = mid
            else:
                lo = mid
        out[i] = 0.5 * (lo + hi)
    return out


def box01(n=2):
    return Bounds(np.zeros(n), np.ones(n), eps=EPS)


class TestSecant:
    def test_identical_states(self):
        z = np.array([0.4, 0.6])
        pred = secant_predict(z, z.copy(), 1.0, 2.0, 0.5, box01())
        np.testing.assert_array_equal(pred.z, z)

    def test_affine_branch_exact(self):
        # z(mu) = a + b*mu is reproduced exactly by secant extrapolation
        a = np.array([0.3, 0.5])
        b = np.array([0.02, -0.01])
        z2, z1 = a + b * 2.0, a + b * 1.0
        pred = secant_predict(z1, z2, 1.0, 2.0, 0.25, box01())
        np.testing.assert_allclose(pred.z, a + b * 0.25, rtol=1e-12)

    def test_clamp_to_bounds(self):
        z1 = np.array([0.95, 0.5])
        z2 = np.array([0.85, 0.5])
        pred = secant_predict(z1, z2, 1.0, 2.0, 0.0, box01())  # extrapolates to 1.05
        assert pred.z[0] == 1.0

    def test_missing_history_falls_back(self):
        z = np.array([0.4, 0.6])
        pred = secant_predict(z, None, 1.0, None, 0.5, box01())
        np.testing.assert_array_equal(pred.z, z)
        assert pred.fallback == "no-history"


class TestTangent:
    def test_zero_dmu(self):
        z = central_path_point(0.5)
        pred = tangent_predict(qp_jacobian(z, 0.5), qp_dF_dmu(z), z, 0.0, box01())
        np.testing.assert_array_equal(pred.z, z)

    def test_second_order_accuracy(self):
        """Tangent error O(dmu^2), frozen prediction O(dmu); orders within 0.3."""
        mu = 0.5
        z = central_path_point(mu)
        errs_t, errs_f, dmus = [], [], [0.1, 0.05, 0.025, 0.0125]
        for dmu in dmus:
            target = central_path_point(mu - dmu)
            pred = tangent_predict(qp_jacobian(z, mu), qp_dF_dmu(z), z, -dmu, box01())
            errs_t.append(np.linalg.norm(pred.z - target))
            errs_f.append(np.linalg.norm(z - target))
        order_t = np.polyfit(np.log(dmus), np.log(errs_t), 1)[0]
        order_f = np.polyfit(np.log(dmus), np.log(errs_f), 1)[0]
        assert abs(order_t - 2.0) < 0.3
        assert abs(order_f - 1.0) < 0.3

    def test_matches_feasible_when_interior(self):
        mu = 0.8
        z = central_path_point(mu)
        J, dF = qp_jacobian(z, mu), qp_dF_dmu(z)
        p_t = tangent_predict(J, dF, z, -0.05, box01())
        p_ft = feasible_tangent_predict(J, dF, z, -0.05, box01())
        np.testing.assert_allclose(p_ft.z, p_t.z, atol=1e-12)

    def test_singular_jacobian_falls_back(self):
        z = np.array([0.5, 0.5])
        J = sp.csr_matrix(np.zeros((2, 2)))
        pred = tangent_predict(J, np.ones(2), z, -0.1, box01())
        np.testing.assert_array_equal(pred.z, z)
        assert pred.fallback == "singular-jacobian"


class TestFeasibleTangent:
    def test_zero_dmu(self):
        z = np.array([0.2, 0.9])
        pred = feasible_tangent_predict(qp_jacobian(z, 0.5), qp_dF_dmu(z), z, 0.0, box01())
        np.testing.assert_array_equal(pred.z, z)

    def test_bound_dofs_stay_on_bound(self):
        # dof 0 at the lower bound with the tangent pushing it negative:
        # the complementarity branch keeps it exactly at 0
        z = np.array([0.0, 0.5])
        J = sp.csr_matrix(np.eye(2))
        dF = np.array([1.0, 0.0])  # dz_raw = -dF*dmu = -0.2 < -rho0 = 0
        pred = feasible_tangent_predict(J, dF, z, 0.2, box01())
        assert pred.z[0] == 0.0
        assert pred.z[1] == pytest.approx(0.5, abs=1e-14)

    def test_feasibility_exact(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            n = 6
            bounds = Bounds(np.zeros(n), np.ones(n), eps=EPS)
            z = rng.uniform(0.0, 1.0, n)
            z[rng.integers(0, n)] = 0.0
            z[rng.integers(0, n)] = 1.0
            B = rng.standard_normal((n, n))
            J = sp.csr_matrix(B @ B.T + n * np.eye(n))
            dF = rng.standard_normal(n) * 5
            pred = feasible_tangent_predict(J, dF, z, -0.3, bounds)
            assert np.all(pred.z[:n] >= 0.0) and np.all(pred.z[:n] <= 1.0)

    def test_consistency_small_dmu(self):
        mu = 0.5
        z = central_path_point(mu)
        norms = []
        for dmu in (0.1, 0.05, 0.025):
            pred = feasible_tangent_predict(qp_jacobian(z, mu), qp_dF_dmu(z), z, -dmu, box01())
            norms.append(np.linalg.norm(pred.z - z))
        ratios = [norms[i] / norms[i + 1] for i in range(len(norms) - 1)]
        for r in ratios:
            assert 1.5 < r < 2.5  # linear in dmu


class TestPredictorKind:
    def test_enum_values(self):
        assert PredictorKind("feasible-tangent") is PredictorKind.feasible_tangent
        assert PredictorKind("none") is PredictorKind.none
        with pytest.raises(ValueError):
            PredictorKind("cubic")
