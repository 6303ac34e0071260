"""Sparse and dense linear algebra used by the solvers.

Sparse operators are ``scipy.sparse.csr_matrix`` objects in canonical form
(sorted column indices, no duplicates).  Dense matrices and vectors are plain
C-ordered ``numpy`` arrays.

The symmetric eigensolvers are Jacobi rotation methods:

- :func:`eigh` is the classical two-sided cyclic Jacobi iteration on a
  symmetric matrix;
- :func:`gram_eigh` is the one-sided (Hestenes) variant, which
  diagonalises ``B^T B`` by orthogonalising the columns of ``B`` and never
  forms the product.  Small eigenvalues then keep their relative accuracy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "SolverError",
    "SingularMatrixError",
    "EigenDecomposition",
    "as_csr",
    "check_csr",
    "spmv",
    "solve_cg",
    "eigh",
    "gram_eigh",
    "DenseLU",
    "solve_dense",
]

_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e} "
                         f"after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SingularMatrixError(np.linalg.LinAlgError):
    """A factorisation met a pivot that is numerically zero."""


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs sorted by descending eigenvalue; eigenvectors are columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


# ---------------------------------------------------------------------------
# sparse helpers

def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical float CSR matrix (copy only if needed)."""
    A = sp.csr_matrix(A, dtype=float)
    if not A.has_canonical_format:
        A = A.copy()
        A.sum_duplicates()
        A.sort_indices()
    return A


def check_csr(A) -> None:
    """Raise ``ValueError`` unless ``A`` satisfies the CSR structure invariants."""
    if not sp.isspmatrix_csr(A):
        raise ValueError("expected a CSR matrix")
    n_rows, n_cols = A.shape
    ptr, idx = A.indptr, A.indices
    if ptr.shape != (n_rows + 1,) or ptr[0] != 0 or np.any(np.diff(ptr) < 0):
        raise ValueError("row offsets must be nondecreasing with length n_rows+1")
    if idx.size and (idx.min() < 0 or idx.max() >= n_cols):
        raise ValueError("column index out of bounds")
    d = np.diff(idx)
    row_start = np.zeros(idx.size, dtype=bool)
    row_start[ptr[:-1][ptr[:-1] < idx.size]] = True
    if np.any((d <= 0) & ~row_start[1:]):
        raise ValueError("column indices must increase strictly within a row")


def spmv(A, x) -> np.ndarray:
    """Sparse matrix-vector product ``A @ x`` with a dimension check."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


# ---------------------------------------------------------------------------
# conjugate gradients

def solve_cg(A, b, tol=1e-10, max_iter=None, nullspace=False, x0=None,
             jacobi=False):
    """Conjugate gradients for symmetric positive (semi-)definite ``A``.

    Parameters
    ----------
    A : sparse matrix
        Symmetric; positive definite, or positive semi-definite with the
        constant vector as its kernel when ``nullspace`` is set.
    b : ndarray
        Right-hand side.  With ``nullspace`` it must be mean-zero up to
        ``tol * ||b||``; the remaining constant part is projected out.
    tol : float
        Target relative residual ``||b - A x|| / ||b||``.
    max_iter : int, optional
        Iteration cap, default ``10 * n``.
    nullspace : bool
        Project the constant component out of every residual and of the
        returned solution (which then has zero mean).
    x0 : ndarray, optional
        Initial guess.
    jacobi : bool
        Use diagonal scaling as preconditioner.

    Returns
    -------
    ndarray

    Raises
    ------
    SolverError
        If the tolerance is not met within ``max_iter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: {A.shape} vs {b.shape}")
    if max_iter is None:
        max_iter = 10 * n
    if nullspace:
        mean = b.mean()
        bnorm = np.linalg.norm(b)
        if abs(mean) * np.sqrt(n) > max(tol, 1e-12) * bnorm:
            raise ValueError("right-hand side is not orthogonal to constants")
        b = b - mean
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)

    dinv = 1.0 / A.diagonal() if jacobi else None
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if nullspace:
        x -= x.mean()

    it = 0
    for _restart in range(4):
        r = b - A @ x
        if nullspace:
            r -= r.mean()
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            break
        z = r * dinv if jacobi else r
        if nullspace and jacobi:
            z = z - z.mean()
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            it += 1
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0.0:
                raise SolverError("matrix is not positive definite on the "
                                  "search space", rnorm / bnorm, it)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if nullspace:
                r -= r.mean()
            rnorm = np.linalg.norm(r)
            if rnorm <= 0.5 * tol * bnorm:
                break
            z = r * dinv if jacobi else r
            if nullspace and jacobi:
                z = z - z.mean()
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
        if it >= max_iter:
            break
    if nullspace:
        x -= x.mean()
    r = b - A @ x
    if nullspace:
        r -= r.mean()
    res = np.linalg.norm(r) / bnorm
    if res > tol:
        raise SolverError("CG did not converge", res, it)
    return x


# ---------------------------------------------------------------------------
# Jacobi eigensolvers

def _fix_signs(V):
    """Flip columns so that each entry of largest magnitude is positive."""
    if V.size == 0:
        return V
    k = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[k, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def eigh(S, max_sweeps=100) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Rotations are skipped once an off-diagonal entry is negligible relative
    to its diagonal pair; the iteration stops after a sweep with no
    rotation.  Eigenvectors get the largest-entry-positive sign convention.

    Raises
    ------
    ValueError
        If ``S`` is not square or not symmetric to 1e-12 relative.
    SolverError
        If ``max_sweeps`` sweeps do not converge.
    """
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    scale = np.max(np.abs(S)) if S.size else 0.0
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (S + S.T)
    V = np.eye(n)
    tiny = np.finfo(float).tiny / _EPS

    for _sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                app, aqq = A[p, p], A[q, q]
                if abs(apq) <= max(_EPS * np.sqrt(abs(app * aqq)), tiny):
                    continue
                rotated = True
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.hypot(theta, 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise SolverError("Jacobi eigensolver did not converge",
                          float(np.linalg.norm(A - np.diag(np.diag(A)))), max_sweeps)

    lam = np.diag(A).copy()
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], _fix_signs(V[:, order])
    if n and lam[-1] < -1e-12 * scale:
        warnings.warn(f"negative eigenvalue {lam[-1]:.3e} in a matrix expected "
                      "to be positive semi-definite", RuntimeWarning, stacklevel=2)
    return EigenDecomposition(lam, V)


def gram_eigh(B, max_sweeps=100):
    """Eigendecomposition of ``B^T B`` by one-sided Jacobi on the columns of B.

    Returns
    -------
    EigenDecomposition
        Eigenvalues ``sigma_i^2`` (descending) and orthonormal eigenvectors
        ``V`` (the right singular vectors of ``B``).
    W : ndarray
        ``B @ V`` accumulated alongside, so columns of ``W`` have norm
        ``sigma_i`` and are mutually orthogonal.
    """
    W = np.array(B, dtype=float)
    if W.ndim != 2:
        raise ValueError("expected a matrix")
    k = W.shape[1]
    V = np.eye(k)
    for _sweep in range(max_sweeps):
        rotated = False
        for i in range(k - 1):
            for j in range(i + 1, k):
                wi, wj = W[:, i], W[:, j]
                alpha = wi @ wi
                beta = wj @ wj
                gamma = wi @ wj
                if alpha == 0.0 or beta == 0.0 or abs(gamma) <= _EPS * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 / (abs(zeta) + np.hypot(zeta, 1.0))
                if zeta < 0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi, wj = wi.copy(), wj.copy()
                W[:, i] = c * wi - s * wj
                W[:, j] = s * wi + c * wj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj
        if not rotated:
            break
    else:
        raise SolverError("one-sided Jacobi did not converge", np.nan, max_sweeps)

    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    return EigenDecomposition(sigma[order] ** 2, V[:, order]), W[:, order]


# ---------------------------------------------------------------------------
# dense solves

class DenseLU:
    """Partial-pivoting LU factorisation with a singularity guard.

    Raises
    ------
    SingularMatrixError
        If a pivot is below ``1e-14 * ||A||_inf``.
    """

    def __init__(self, A):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        self.n = A.shape[0]
        norm_inf = np.max(np.abs(A).sum(axis=1)) if self.n else 0.0
        if self.n == 0:
            self._lu = None
            return
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        if np.min(np.abs(np.diag(lu))) < 1e-14 * norm_inf or norm_inf == 0.0:
            raise SingularMatrixError("matrix is numerically singular")
        self._lu = (lu, piv)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        if self.n == 0:
            return b.copy()
        return scipy.linalg.lu_solve(self._lu, b, check_finite=False)


def solve_dense(A, b):
    """Solve a small dense system by partial-pivoting LU."""
    return DenseLU(A).solve(b)
