"""Sparse factorization against a hand-rolled dense elimination oracle."""

import numpy as np
import pytest
import scipy.sparse as sp

from defbar.linalg import (
    SingularMatrixError,
    SparseMatrix,
    condition_estimate,
    factorize,
    solve,
    write_matrix_market,
)


def dense_gauss_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting; the independent oracle."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) < 1e-300:
            raise ZeroDivisionError("singular")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        for i in range(k + 1, n):
            m = A[i, k] / A[k, k]
            A[i, k:] -= m * A[k, k:]
            b[i] -= m * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


class TestFactorizeSolve:
    def test_identity(self):
        F = factorize(sp.identity(5, format="csr"))
        b = np.arange(5.0)
        np.testing.assert_allclose(solve(F, b), b, atol=1e-15)

    def test_hand_2x2(self):
        A = SparseMatrix.from_dense([[2.0, 1.0], [1.0, 3.0]])
        x = solve(factorize(A), np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-14)

    def test_zero_row_singular(self):
        A = np.array([[1.0, 2.0], [0.0, 0.0]])
        with pytest.raises(SingularMatrixError):
            factorize(SparseMatrix.from_dense(A))

    def test_zero_rhs(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((8, 8)) + 8 * np.eye(8)
        x = solve(factorize(SparseMatrix.from_dense(A)), np.zeros(8))
        np.testing.assert_allclose(x, 0.0, atol=1e-15)

    def test_permuted_diagonal(self):
        n = 6
        rng = np.random.default_rng(3)
        perm = rng.permutation(n)
        A = np.zeros((n, n))
        d = rng.uniform(0.5, 2.0, n)
        A[np.arange(n), perm] = d
        b = rng.standard_normal(n)
        x = solve(factorize(SparseMatrix.from_dense(A)), b)
        expect = np.zeros(n)
        expect[perm] = b / d
        np.testing.assert_allclose(x, expect, rtol=1e-14)

    def test_random_spd_against_dense_oracle(self):
        rng = np.random.default_rng(7)
        n = 50
        B = rng.standard_normal((n, n))
        A = B @ B.T + n * np.eye(n)
        b = rng.standard_normal(n)
        x = solve(factorize(SparseMatrix.from_dense(A)), b)
        np.testing.assert_allclose(x, dense_gauss_solve(A, b), rtol=1e-9)

    def test_roundtrip_recovery(self):
        rng = np.random.default_rng(11)
        for n in (20, 100, 500):
            A = sp.random(n, n, density=0.05, random_state=rng.integers(1 << 31)) \
                + sp.diags(np.full(n, 10.0))
            x = rng.standard_normal(n)
            F = factorize(SparseMatrix.from_scipy(A))
            np.testing.assert_allclose(F.solve(A @ x), x, rtol=1e-9)

    def test_dimension_mismatch(self):
        F = factorize(sp.identity(4, format="csr"))
        with pytest.raises(ValueError):
            F.solve(np.ones(5))

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        A = sp.random(60, 60, density=0.1, random_state=1) + sp.diags(np.full(60, 5.0))
        b = rng.standard_normal(60)
        x1 = factorize(SparseMatrix.from_scipy(A)).solve(b)
        x2 = factorize(SparseMatrix.from_scipy(A)).solve(b)
        assert np.array_equal(x1, x2)


class TestConditionEstimate:
    def test_identity(self):
        k = condition_estimate(sp.identity(20, format="csr"))
        assert 0.5 <= k <= 2.0

    def test_diag_extremes(self):
        A = sp.diags([1.0] + [1.0] * 8 + [1e6])
        k = condition_estimate(A)
        assert 1e6 / 2 <= k <= 2e6

    def test_singular_sentinel(self):
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert condition_estimate(SparseMatrix.from_dense(A)) == float("inf")


class TestMatrixMarket:
    def test_dump_roundtrip(self, tmp_path):
        A = SparseMatrix.from_dense([[1.0, 0.0], [2.5, -3.0]])
        path = tmp_path / "a.mtx"
        write_matrix_market(A, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("%%MatrixMarket")
        assert lines[1].split() == ["2", "2", "3"]
        entries = {tuple(l.split()[:2]): float(l.split()[2]) for l in lines[2:]}
        assert entries[("2", "2")] == -3.0
