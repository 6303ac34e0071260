"""Snapshot sets and POD bases in the L2 (mass-matrix) inner product.

A snapshot set stacks ``M`` consecutive FE fields ``f^{n0} .. f^{n0+M-1}``
followed by their ``M - 1`` backward difference quotients, giving
``N_s = 2M - 1`` columns ``S``.  The correlation matrix is
``K = S^T M S`` and the modes are ``phi_i = S x_i / sqrt(lambda_i)`` for the
eigenpairs ``(lambda_i, x_i)`` of ``K``.

Two routes compute the same basis:

``method="qr"`` (default)
    M-orthogonal Gram-Schmidt (two passes) gives ``S = Q R`` with
    ``Q^T M Q = I``.  One-sided Jacobi on ``R`` then yields ``R V = W``, the
    eigenpairs ``(|w_i|^2, v_i)`` of ``K = R^T R``, and modes
    ``phi_i = Q w_i / |w_i|``.  That is algebraically ``S v_i / sqrt(lambda_i)``,
    but it never squares the condition number.
``method="gram"``
    Forms ``K`` explicitly, diagonalises it by two-sided Jacobi and applies
    the explicit mode formula.  Modes for eigenvalues near the rank cutoff
    then lose orthogonality, so this route is mainly a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import eigh, gram_eigh

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "EmptyBasisError",
    "build_snapshots",
    "snapshots_from_fields",
    "correlation_matrix",
    "m_orthogonal_qr",
    "build_pod_basis",
    "energy_fraction",
    "project_l2",
    "reconstruct",
    "check_projection_identity",
    "identity_report",
    "pointwise_projection_check",
    "inverse_estimate_check",
]


class EmptyBasisError(ValueError):
    """Every eigenvalue fell below the rank cutoff."""


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Value columns then difference-quotient columns, ``(n_dofs, 2M - 1)``."""

    kind: str
    columns: np.ndarray
    dt: float
    window: tuple

    @property
    def M(self) -> int:
        return self.window[1]

    @property
    def n_snapshots(self) -> int:
        return self.columns.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.columns[:, :self.M]

    @property
    def quotients(self) -> np.ndarray:
        return self.columns[:, self.M:]


def snapshots_from_fields(fields, kind, dt, n0) -> SnapshotSet:
    """Snapshot set from ``M`` consecutive coefficient vectors (rows of ``fields``)."""
    V = np.asarray(fields, dtype=float).T
    M = V.shape[1]
    if M < 1:
        raise ValueError("need at least one field")
    dq = (V[:, 1:] - V[:, :-1]) / dt
    cols = np.ascontiguousarray(np.hstack([V, dq]))
    cols.setflags(write=False)
    return SnapshotSet(kind, cols, float(dt), (int(n0), int(M)))


def build_snapshots(trajectory, kind, window=None) -> SnapshotSet:
    """Collect the snapshot window from a :class:`~stokes_pod.fom.FomTrajectory`.

    ``kind`` is ``"velocity"`` (intermediate velocity) or ``"pressure"``.
    """
    n0, M = trajectory.config.record_window if window is None else window
    try:
        rows = [trajectory.index_of(n) for n in range(n0, n0 + M)]
    except KeyError as exc:
        raise ValueError(f"trajectory does not cover the window: {exc}") from None
    if kind == "velocity":
        data = trajectory.u_tilde
    elif kind == "pressure":
        data = trajectory.p
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return snapshots_from_fields(data[rows], kind, trajectory.dt, n0)


def correlation_matrix(snaps: SnapshotSet, M_mass) -> np.ndarray:
    """``K = S^T M S`` (symmetrised)."""
    S = snaps.columns
    if M_mass.shape[1] != S.shape[0]:
        raise ValueError("mass matrix and snapshots do not match")
    K = S.T @ (M_mass @ S)
    return 0.5 * (K + K.T)


def m_orthogonal_qr(S, M_mass, dependence_tol=1e-14):
    """Two-pass classical Gram-Schmidt in the M inner product.

    Returns ``Q`` and upper-triangular ``R`` with ``S = Q R`` up to rounding.
    A column whose residue after both passes is below ``dependence_tol``
    times its own norm is taken as dependent: its ``Q`` column and ``R``
    diagonal are zero.  Nonzero columns of ``Q`` are M-orthonormal.
    """
    S = np.asarray(S, dtype=float)
    n, k = S.shape
    Q = np.zeros((n, k))
    R = np.zeros((k, k))
    for j in range(k):
        v = S[:, j].copy()
        norm0 = np.sqrt(max(v @ (M_mass @ v), 0.0))
        for _ in range(2):
            c = Q[:, :j].T @ (M_mass @ v)
            v -= Q[:, :j] @ c
            R[:j, j] += c
        nv = np.sqrt(max(v @ (M_mass @ v), 0.0))
        if nv > dependence_tol * norm0:
            R[j, j] = nv
            Q[:, j] = v / nv
    return Q, R


@dataclass(frozen=True, eq=False)
class PodBasis:
    """POD modes and spectrum.

    Attributes
    ----------
    modes : (n_dofs, d) ndarray
        M-orthonormal modes, most energetic first.
    eigenvalues : (d,) ndarray
        Retained eigenvalues, descending.
    spectrum : (N_s,) ndarray
        All computed eigenvalues of the correlation matrix (noise included).
    coefficients : (N_s, d) ndarray
        Unit eigenvectors ``x_i`` of the correlation matrix.
    rank_threshold : float
        Eigenvalues at or below this were dropped.
    orthonormality_error : float
        ``max |Phi^T M Phi - I|`` measured after the build.
    """

    kind: str
    modes: np.ndarray
    eigenvalues: np.ndarray
    spectrum: np.ndarray
    coefficients: np.ndarray
    rank_threshold: float
    orthonormality_error: float
    method: str = "qr"

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    def truncated(self, r: int) -> np.ndarray:
        _check_rank(self, r, allow_zero=True)
        return self.modes[:, :r]


def _check_rank(basis, r, allow_zero=False):
    lo = 0 if allow_zero else 1
    if int(r) != r or not lo <= r <= basis.d:
        raise ValueError(f"rank {r} outside [{lo}, {basis.d}]")


def build_pod_basis(snaps: SnapshotSet, M_mass, rank_tolerance: float = 1e-13,
                    absolute_floor: float = 1e-15, method: str = "qr",
                    gram_tolerance: float = 1e-8) -> PodBasis:
    """POD basis keeping eigenvalues above ``max(rank_tolerance*lambda_1, absolute_floor)``.

    Raises
    ------
    EmptyBasisError
        If no eigenvalue survives the cutoff.
    ArithmeticError
        If the modes miss M-orthonormality by more than ``gram_tolerance``.
    """
    S = snaps.columns
    if method == "qr":
        Q, R = m_orthogonal_qr(S, M_mass)
        dec, W = gram_eigh(R)
        lam, X = dec.eigenvalues, dec.eigenvectors
    elif method == "gram":
        dec = eigh(correlation_matrix(snaps, M_mass))
        lam, X = dec.eigenvalues, dec.eigenvectors
    else:
        raise ValueError(f"unknown method {method!r}")

    threshold = max(rank_tolerance * max(lam[0], 0.0), absolute_floor)
    above = lam > threshold
    d = lam.size if above.all() else int(np.argmin(above))
    if d == 0:
        raise EmptyBasisError("all eigenvalues are below the rank cutoff")

    if method == "qr":
        sigma = np.sqrt(lam[:d])
        modes = Q @ (W[:, :d] / sigma)
    else:
        modes = S @ (X[:, :d] / np.sqrt(lam[:d]))

    # deterministic signs: largest-magnitude entry of each mode positive
    k = np.argmax(np.abs(modes), axis=0)
    sgn = np.sign(modes[k, np.arange(d)])
    sgn[sgn == 0] = 1.0
    modes = modes * sgn
    X = X.copy()
    X[:, :d] *= sgn

    gram = modes.T @ (M_mass @ modes)
    err = float(np.max(np.abs(gram - np.eye(d))))
    if err > gram_tolerance:
        raise ArithmeticError(f"POD modes not orthonormal: defect {err:.2e}")
    for a in (modes, lam, X):
        a.setflags(write=False)
    return PodBasis(snaps.kind, modes, lam[:d].copy(), lam, X[:, :d], threshold, err, method)


def energy_fraction(basis: PodBasis, r: int) -> float:
    """Share of retained eigenvalue mass captured by the first ``r`` modes."""
    _check_rank(basis, r)
    lam = basis.eigenvalues
    return float(np.sum(lam[:r]) / np.sum(lam))


def project_l2(basis: PodBasis, M_mass, f, r: int) -> np.ndarray:
    """Coefficients ``a_i = phi_i^T M f``, ``i < r``, of the L2 projection."""
    _check_rank(basis, r, allow_zero=True)
    coeffs = np.asarray(getattr(f, "coefficients", f), dtype=float)
    return basis.modes[:, :r].T @ (M_mass @ coeffs)


def reconstruct(basis: PodBasis, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return basis.modes[:, :a.shape[0]] @ a


@dataclass(frozen=True)
class IdentityCheck:
    """Sides of the projection-error identity for one rank.

    ``lhs`` carries the ``1/N_s`` prefactor, ``lhs_sum`` is the plain sum of
    squared projection errors, ``rhs`` is the tail ``sum_{k>r} lambda_k``.
    """

    r: int
    lhs: float
    lhs_sum: float
    rhs: float


def check_projection_identity(snaps: SnapshotSet, basis: PodBasis, M_mass, r: int) -> IdentityCheck:
    """Evaluate both sides of ``sum_j |s_j - Pi_r s_j|^2 = sum_{k>r} lambda_k``."""
    _check_rank(basis, r, allow_zero=True)
    S = snaps.columns
    Phi = basis.modes[:, :r]
    E = S - Phi @ (Phi.T @ (M_mass @ S))
    lhs_sum = float(np.sum(E * (M_mass @ E)))
    # the tail runs over the whole computed spectrum, including noise-level
    # eigenvalues beyond d, so that r = d leaves only rounding-sized residue
    rhs = float(np.sum(np.clip(basis.spectrum[r:], 0.0, None)))
    return IdentityCheck(int(r), lhs_sum / snaps.n_snapshots, lhs_sum, rhs)


def _rel(a, b, floor):
    return abs(a - b) / max(abs(b), floor)


def identity_report(snaps: SnapshotSet, basis: PodBasis, M_mass, ranks=None) -> dict:
    """Check the identity for every rank and detect which normalisation is exact.

    Relative mismatches use ``max(rhs, 1e-14 * total energy)`` as the
    denominator so that ranks whose tail is pure rounding noise are judged
    on an absolute scale.

    Returns a dict with the per-rank checks, the maximal relative mismatch
    under each normalisation (``"sum"``: no prefactor, ``"mean"``: ``1/N_s``
    on the left only) and the name of the one that holds.
    """
    ranks = range(1, basis.d + 1) if ranks is None else ranks
    checks = [check_projection_identity(snaps, basis, M_mass, r) for r in ranks]
    total = float(np.sum(np.clip(basis.spectrum, 0.0, None)))
    floor = 1e-14 * total
    mism = {
        "sum": max(_rel(c.lhs_sum, c.rhs, floor) for c in checks),
        "mean": max(_rel(c.lhs, c.rhs, floor) for c in checks),
    }
    chosen = min(mism, key=mism.get)
    return {"checks": checks, "mismatch": mism, "normalization": chosen,
            "max_relative_mismatch": mism[chosen]}


def pointwise_projection_check(basis: PodBasis, M_mass, fields, r: int, T: float):
    """Largest squared projection error over ``fields`` and the bound
    ``6 max(1, T^2) sum_{i>r} lambda_i``."""
    Phi = basis.modes[:, :r]
    F = np.asarray(fields, dtype=float).T
    E = F - Phi @ (Phi.T @ (M_mass @ F))
    worst = float(np.max(np.sum(E * (M_mass @ E), axis=0)))
    bound = 6.0 * max(1.0, T ** 2) * float(np.sum(basis.eigenvalues[r:]))
    return worst, bound


def inverse_estimate_check(basis: PodBasis, M_mass, A, r: int, n_samples: int = 50,
                           rng: Optional[np.random.Generator] = None):
    """Compare ``|grad v|`` with ``sqrt(lambda_max(Phi_r^T A Phi_r)) |v|`` on random v.

    Returns ``(max_ratio, constant)`` where ``max_ratio`` is the largest
    observed ``|grad v| / |v|``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    Phi = basis.modes[:, :r]
    Ar = Phi.T @ (A @ Phi)
    const = float(np.sqrt(max(eigh(0.5 * (Ar + Ar.T)).eigenvalues[0], 0.0)))
    worst = 0.0
    for _ in range(n_samples):
        v = Phi @ rng.standard_normal(r)
        ratio = np.sqrt(max(v @ (A @ v), 0.0) / (v @ (M_mass @ v)))
        worst = max(worst, float(ratio))
    return worst, const
