"""Tests for the sparse-symmetric wrapper, CG, and eigenpair extraction."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

import cellhom as ch
from cellhom import InvalidInputError, SolverFailure
from cellhom.linalg import SparseSym, cg_solve, smallest_eigpairs


def _random_spd(n, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    return SparseSym.from_csr(sp.csr_matrix(A)), rng


def test_sparse_sym_rejects_asymmetric():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.5, 2.0]]))
    with pytest.raises(InvalidInputError):
        SparseSym.from_csr(A)


def test_sparse_sym_roundtrip():
    A = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    S = SparseSym.from_csr(A)
    np.testing.assert_array_equal(S.toarray(), A.toarray())
    np.testing.assert_array_equal(S.diagonal(), [2.0, 2.0])
    np.testing.assert_allclose(S.matvec(np.array([1.0, 1.0])), [1.0, 1.0])


def test_cg_matches_dense_solve():
    A, rng = _random_spd(40)
    b = rng.standard_normal(40)
    x, iters = cg_solve(A, b, tol=1e-13)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-8)
    assert 0 < iters <= 40 * 20


def test_cg_zero_rhs_short_circuit():
    A, _ = _random_spd(10)
    x, iters = cg_solve(A, np.zeros(10))
    assert iters == 0
    np.testing.assert_array_equal(x, np.zeros(10))


def test_cg_no_preconditioner_agrees():
    A, rng = _random_spd(25, seed=3)
    b = rng.standard_normal(25)
    x1, _ = cg_solve(A, b, tol=1e-13, precond="jacobi")
    x2, _ = cg_solve(A, b, tol=1e-13, precond="none")
    np.testing.assert_allclose(x1, x2, rtol=1e-9)


def test_cg_iteration_cap_raises():
    A, rng = _random_spd(60, seed=1)
    b = rng.standard_normal(60)
    with pytest.raises(SolverFailure) as exc:
        cg_solve(A, b, tol=1e-14, maxit=2)
    assert "residual" in str(exc.value)


def test_cg_rejects_indefinite():
    # positive diagonal but eigenvalues 3 and -1: the curvature check trips
    A = SparseSym.from_csr(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    b = np.array([1.0, -1.0])
    with pytest.raises(SolverFailure):
        cg_solve(A, b, precond="none")
    # a negative diagonal is caught even earlier, as unusable input
    B = SparseSym.from_csr(sp.csr_matrix(np.diag([1.0, -1.0, 2.0])))
    with pytest.raises(InvalidInputError):
        cg_solve(B, np.ones(3), precond="jacobi")


def test_cg_projected_singular_system():
    # periodic stiffness has the constant nullspace; project it out
    g = ch.build_grid(dim=1, side=1.0, n=16, bc="periodic")
    fs = ch.assemble(ch.TensorField(
        dim=1,
        fn=lambda y: (2.0 + np.sin(2.0 * np.pi * y[..., 0]))[..., None, None],
        alpha=1.0,
        beta=3.0,
    ), g)
    K = fs.stiffness
    n = K.mat.shape[0]
    rng = np.random.default_rng(5)
    b = rng.standard_normal(n)
    b -= b.mean()

    def project(v):
        return v - v.mean()

    x, _ = cg_solve(K, b, tol=1e-12, project=project)
    assert abs(x.mean()) < 1e-10
    np.testing.assert_allclose(K.matvec(x), b, atol=1e-8)


def _laplace_1d(n):
    g = ch.build_grid(dim=1, side=1.0, n=n, bc="dirichlet")
    fs = ch.assemble(ch.constant_field(1.0, dim=1), g)
    return fs.stiffness, fs.mass


def test_smallest_eigpairs_dense_path():
    K, M = _laplace_1d(16)
    pairs = smallest_eigpairs(K, M, N=3)
    h = 1.0 / 16.0
    expected = [
        6.0 / h**2 * (1.0 - math.cos(k * math.pi * h)) / (2.0 + math.cos(k * math.pi * h))
        for k in (1, 2, 3)
    ]
    np.testing.assert_allclose(pairs.lambdas, expected, rtol=1e-9)
    assert pairs.count == 3
    assert np.all(np.diff(pairs.lambdas) > 0)
    # M-orthonormality of the returned block
    V = pairs.vectors
    np.testing.assert_allclose(V.T @ (M.mat @ V), np.eye(3), atol=1e-8)
    assert np.all(pairs.residuals < 1e-7)


def test_smallest_eigpairs_iterative_path_matches_formula():
    # large enough to take the shift-invert route
    K, M = _laplace_1d(600)
    pairs = smallest_eigpairs(K, M, N=3)
    h = 1.0 / 600.0
    expected = [
        6.0 / h**2 * (1.0 - math.cos(k * math.pi * h)) / (2.0 + math.cos(k * math.pi * h))
        for k in (1, 2, 3)
    ]
    np.testing.assert_allclose(pairs.lambdas, expected, rtol=1e-8)
    # seeded starting vector makes repeat calls reproducible
    again = smallest_eigpairs(K, M, N=3)
    np.testing.assert_array_equal(pairs.lambdas, again.lambdas)


def test_smallest_eigpairs_too_many_modes():
    K, M = _laplace_1d(8)
    with pytest.raises(InvalidInputError):
        smallest_eigpairs(K, M, N=K.mat.shape[0] + 1)
