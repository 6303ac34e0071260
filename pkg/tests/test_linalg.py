import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stokes_pod.fem import assemble_operators
from stokes_pod.linalg import (DenseLU, SingularMatrixError, SolverError, as_csr,
                               check_csr, eigh, gram_eigh, solve_cg, solve_dense, spmv)
from stokes_pod.mesh import build_structured_mesh


# -- spmv ---------------------------------------------------------------------

def test_spmv_examples():
    x = np.array([3.0, -1.0, 2.0])
    assert np.array_equal(spmv(as_csr(sp.identity(3)), x), x)
    assert np.array_equal(spmv(as_csr(sp.csr_matrix((3, 3))), x), np.zeros(3))
    A = as_csr(np.array([[2.0, 1.0], [1.0, 3.0]]))
    assert np.array_equal(spmv(A, [1.0, 1.0]), [3.0, 4.0])


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(as_csr(sp.identity(3)), np.ones(4))


def test_spmv_matches_row_dot_products(rng):
    A = as_csr(sp.random(30, 20, density=0.2, random_state=1))
    x = rng.standard_normal(20)
    y = spmv(A, x)
    for i in range(30):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        ref = 0.0
        for k in range(lo, hi):
            ref += A.data[k] * x[A.indices[k]]
        assert y[i] == ref


def test_csr_invariants_of_assembled_operators():
    ops = assemble_operators(build_structured_mesh(4))
    for name in ("M_v", "A_v", "M_p", "S_p", "G", "D"):
        check_csr(getattr(ops, name))


def test_check_csr_rejects_unsorted():
    A = sp.csr_matrix((np.array([1.0, 2.0]), np.array([1, 0]), np.array([0, 2])), shape=(1, 2))
    with pytest.raises(ValueError):
        check_csr(A)
    check_csr(as_csr(A))


# -- CG -------------------------------------------------------------------------

def test_cg_identity_and_diagonal(rng):
    b = rng.standard_normal(7)
    assert np.allclose(solve_cg(as_csr(sp.identity(7)), b), b, rtol=1e-12)
    x = solve_cg(as_csr(sp.diags([1.0, 2.0, 4.0])), np.array([1.0, 2.0, 4.0]))
    assert np.allclose(x, 1.0, rtol=1e-10)


def test_cg_nullspace_on_neumann_stiffness(rng):
    S = assemble_operators(build_structured_mesh(4)).S_p
    b = rng.standard_normal(S.shape[0])
    b -= b.mean()
    x = solve_cg(S, b, tol=1e-10, nullspace=True)
    assert np.linalg.norm(b - S @ x) <= 1e-10 * np.linalg.norm(b)
    assert abs(x.mean()) <= 1e-12


def test_cg_nullspace_rejects_incompatible_rhs():
    S = assemble_operators(build_structured_mesh(3)).S_p
    with pytest.raises(ValueError):
        solve_cg(S, np.ones(S.shape[0]), nullspace=True)


def test_cg_failure_carries_residual():
    A = as_csr(sp.diags(np.logspace(0, 8, 200)))
    with pytest.raises(SolverError) as info:
        solve_cg(A, np.ones(200), tol=1e-14, max_iter=3)
    assert info.value.residual > 1e-14
    assert info.value.iterations == 3


def test_cg_warm_start_and_jacobi(rng):
    K = assemble_operators(build_structured_mesh(6)).M_v
    b = rng.standard_normal(K.shape[0])
    x1 = solve_cg(K, b, jacobi=True)
    x2 = solve_cg(K, b, x0=x1 + 1e-3)
    assert np.linalg.norm(b - K @ x1) <= 1e-10 * np.linalg.norm(b)
    assert np.allclose(x1, x2, rtol=1e-8, atol=1e-8)


def test_cg_zero_rhs():
    assert np.array_equal(solve_cg(as_csr(sp.identity(4)), np.zeros(4)), np.zeros(4))


# -- Jacobi eigensolver -------------------------------------------------------

def test_eigh_identity():
    dec = eigh(np.eye(3))
    assert np.allclose(dec.eigenvalues, [1, 1, 1])


def test_eigh_two_by_two():
    dec = eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(dec.eigenvalues, [3.0, 1.0], atol=1e-14)
    v1, v2 = dec.eigenvectors.T
    assert np.allclose(np.abs(v1), [2 ** -0.5] * 2)
    assert np.allclose(v2 * np.sign(v2[0]), np.array([1.0, -1.0]) / np.sqrt(2))


@pytest.mark.filterwarnings("ignore:negative eigenvalue")
def test_eigh_reconstruction_5x5(rng):
    A = rng.standard_normal((5, 5))
    S = A + A.T
    dec = eigh(S)
    V, lam = dec.eigenvectors, dec.eigenvalues
    assert np.max(np.abs(V @ np.diag(lam) @ V.T - S)) <= 1e-9
    assert np.max(np.abs(V.T @ V - np.eye(5))) <= 1e-10
    assert np.all(np.diff(lam) <= 0)


def test_eigh_rejects_asymmetric():
    with pytest.raises(ValueError):
        eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        eigh(np.ones((2, 3)))


def test_eigh_warns_on_negative_eigenvalue():
    with pytest.warns(RuntimeWarning):
        eigh(np.diag([1.0, -1.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eigh(np.diag([1.0, 0.0]))


def test_eigh_sign_convention():
    V = eigh(np.array([[4.0, -3.0], [-3.0, 5.0]])).eigenvectors
    k = np.argmax(np.abs(V), axis=0)
    assert np.all(V[k, [0, 1]] > 0)


symmetric = st.integers(1, 12).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-10, 10, allow_nan=False)))


@settings(max_examples=60, deadline=None)
@given(symmetric)
def test_eigh_properties(A):
    S = A + A.T
    n = S.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        dec = eigh(S)
    V, lam = dec.eigenvectors, dec.eigenvalues
    scale = max(np.max(np.abs(S)), 1.0)
    assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10
    assert np.max(np.abs(S @ V - V * lam)) <= 1e-9 * scale
    assert abs(np.trace(S) - lam.sum()) <= 1e-9 * max(abs(np.trace(S)), scale)
    # sorted descending and equal to an independent LAPACK solve
    assert np.all(np.diff(lam) <= 1e-12 * scale)
    assert np.allclose(lam, np.linalg.eigvalsh(S)[::-1], atol=1e-10 * scale)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 31))
def test_gram_eigh_matches_svd(m, k, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((m, k)) * np.logspace(0, -6, k)
    dec, W = gram_eigh(B)
    s = np.linalg.svd(B, compute_uv=False)
    sig = np.sqrt(dec.eigenvalues)
    assert np.allclose(sig[:len(s)], s, rtol=1e-10, atol=1e-14 * s[0])
    assert np.allclose(W, B @ dec.eigenvectors, atol=1e-12 * s[0])
    V = dec.eigenvectors
    assert np.max(np.abs(V.T @ V - np.eye(k))) <= 1e-10


# -- dense solves -----------------------------------------------------------------

def test_solve_dense_examples(rng):
    b = rng.standard_normal(4)
    assert np.allclose(solve_dense(np.eye(4), b), b)
    assert np.allclose(solve_dense(np.array([[2.0, 0.0], [0.0, 0.5]]), [2.0, 1.0]), [1.0, 2.0])


def test_solve_dense_residual_8x8(rng):
    A = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    b = rng.standard_normal(8)
    x = solve_dense(A, b)
    norm_inf = np.max(np.abs(A).sum(axis=1))
    assert np.max(np.abs(A @ x - b)) <= 1e-10 * (norm_inf * np.max(np.abs(x)) + np.max(np.abs(b)))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_solve_dense_singular():
    with pytest.raises(SingularMatrixError):
        solve_dense(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 1.0])
    with pytest.raises(SingularMatrixError):
        DenseLU(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        DenseLU(np.ones((2, 3)))


def test_lu_reuse(rng):
    A = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    lu = DenseLU(A)
    for _ in range(3):
        b = rng.standard_normal(5)
        assert np.allclose(A @ lu.solve(b), b, atol=1e-12)
