"""P1 finite elements on :class:`~stokes_pod.mesh.TriMesh`.

Velocity DOFs are vertex-major and interleaved: DOF ``2*v + c`` is component
``c`` of the velocity at vertex ``v``.  Pressure DOF ``v`` is the pressure at
vertex ``v``.

All element integrals of the operators are closed form.  Loads and error
norms use triangle quadrature.  Analytic fields that are sums of
``time factor x spatial profile`` terms get their spatial parts cached at the
quadrature points, so repeated evaluation in a time loop only rescales
stored arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr
from .mesh import TriMesh

__all__ = [
    "QuadratureRule",
    "DEGREE5",
    "DEGREE3",
    "CENTROID",
    "DofMap",
    "build_dofmap",
    "FeOperators",
    "FieldVec",
    "SeparableTerm",
    "AnalyticField",
    "assemble_operators",
    "apply_dirichlet",
    "dirichlet_matrix",
    "dirichlet_rhs",
    "QuadratureSampler",
    "LoadAssembler",
    "interpolate",
    "error_norms",
    "mean_zero",
    "FeDiscretization",
    "discretize",
]


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Triangle rule: barycentric points ``(nq, 3)`` and weights summing to 1."""

    name: str
    degree: int
    points: np.ndarray
    weights: np.ndarray


def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def _degree5():
    a1, b1, w1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
    a2, b2, w2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
    pts = [(1 / 3, 1 / 3, 1 / 3)] + _perm3(a1, b1) + _perm3(a2, b2)
    w = [0.225] + [w1] * 3 + [w2] * 3
    return QuadratureRule("degree5-7pt", 5, np.array(pts), np.array(w))


#: 7-point rule exact for polynomials of degree 5.
DEGREE5 = _degree5()
#: 4-point rule exact for degree 3 (one negative weight).
DEGREE3 = QuadratureRule(
    "degree3-4pt", 3,
    np.array([(1 / 3, 1 / 3, 1 / 3)] + _perm3(0.6, 0.2)),
    np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48]))
#: Midpoint rule, exact for linears.
CENTROID = QuadratureRule("centroid", 1, np.array([(1 / 3, 1 / 3, 1 / 3)]),
                          np.array([1.0]))


# ---------------------------------------------------------------------------
# DOFs and fields

@dataclass(frozen=True, eq=False)
class DofMap:
    """Vertex-major interleaved velocity DOFs plus one pressure DOF per vertex.

    ``mean_constraint`` marks that pressures live in the mean-zero subspace.
    """

    n_vertices: int
    n_velocity_dofs: int
    n_pressure_dofs: int
    interior_velocity_dofs: np.ndarray
    boundary_velocity_dofs: np.ndarray
    mean_constraint: bool = True
    layout: str = "vertex-major"

    @staticmethod
    def velocity_dof(vertex, component):
        return 2 * np.asarray(vertex) + component

    @staticmethod
    def components(u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u)
        return u[0::2], u[1::2]


def build_dofmap(mesh: TriMesh) -> DofMap:
    nv = mesh.n_vertices
    bnd = np.flatnonzero(mesh.boundary_vertex)
    inn = np.flatnonzero(~mesh.boundary_vertex)
    both = lambda v: np.sort(np.concatenate([2 * v, 2 * v + 1]))
    ib, bb = both(inn), both(bnd)
    ib.setflags(write=False)
    bb.setflags(write=False)
    return DofMap(nv, 2 * nv, nv, ib, bb)


@dataclass(frozen=True, eq=False)
class FieldVec:
    """FE coefficients of a velocity or pressure field at one time."""

    coefficients: np.ndarray
    kind: str
    time: float = 0.0

    def __post_init__(self):
        if self.kind not in ("velocity", "pressure"):
            raise ValueError(f"unknown field kind {self.kind!r}")


@dataclass(frozen=True)
class SeparableTerm:
    """One ``time_factor(t) * value(x, y)`` term of an analytic field.

    ``value(x, y)`` returns shape ``(n_components, *x.shape)`` and
    ``gradient(x, y)`` returns ``(n_components, 2, *x.shape)``.
    """

    time_factor: Callable[[float], float]
    value: Callable
    gradient: Optional[Callable] = None


class AnalyticField:
    """Closed-form field of ``(x, y, t)`` with an optional gradient.

    Build either from separable terms (preferred, allows caching) or from
    plain callables ``value(x, y, t)`` and ``gradient(x, y, t)``.
    """

    def __init__(self, n_components, terms: Sequence[SeparableTerm] = (),
                 value=None, gradient=None):
        if bool(terms) == (value is not None):
            raise ValueError("give either separable terms or a value callable")
        self.n_components = int(n_components)
        self.terms = tuple(terms)
        self._value = value
        self._gradient = gradient

    @property
    def separable(self) -> bool:
        return bool(self.terms)

    @property
    def has_gradient(self) -> bool:
        if self.terms:
            return all(term.gradient is not None for term in self.terms)
        return self._gradient is not None

    def __call__(self, x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.terms:
            out = np.zeros((self.n_components,) + x.shape)
            for term in self.terms:
                out += term.time_factor(t) * np.asarray(term.value(x, y))
            return out
        return np.asarray(self._value(x, y, t), dtype=float).reshape(
            (self.n_components,) + x.shape)

    def gradient(self, x, y, t):
        if not self.has_gradient:
            raise ValueError("field has no gradient")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.terms:
            out = np.zeros((self.n_components, 2) + x.shape)
            for term in self.terms:
                out += term.time_factor(t) * np.asarray(term.gradient(x, y))
            return out
        return np.asarray(self._gradient(x, y, t), dtype=float).reshape(
            (self.n_components, 2) + x.shape)


# ---------------------------------------------------------------------------
# operators

@dataclass(frozen=True, eq=False)
class FeOperators:
    """Assembled P1 operators.

    ``G[(i, c), j] = (d_c psi_j, phi_i)`` maps pressure to the velocity test
    space, ``D[i, (j, c)] = (d_c phi_j, psi_i)`` is the weak divergence.
    """

    M_v: sp.csr_matrix
    A_v: sp.csr_matrix
    M_p: sp.csr_matrix
    S_p: sp.csr_matrix
    G: sp.csr_matrix
    D: sp.csr_matrix


def _geometry(mesh):
    p = mesh.vertices[mesh.triangles]                     # (nt, 3, 2)
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    grads = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        grads[:, k, 0] = y[:, k1] - y[:, k2]
        grads[:, k, 1] = x[:, k2] - x[:, k1]
    grads /= (2.0 * area)[:, None, None]
    return area, grads


def _coo(rows, cols, vals, shape):
    return as_csr(sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                shape=shape).tocsr())


def assemble_operators(mesh: TriMesh, dofmap: Optional[DofMap] = None) -> FeOperators:
    """Assemble mass, stiffness and coupling matrices with exact element integrals."""
    if dofmap is None:
        dofmap = build_dofmap(mesh)
    tri = mesh.triangles
    nv = mesh.n_vertices
    area, grads = _geometry(mesh)

    I = np.broadcast_to(tri[:, :, None], tri.shape + (3,))
    J = np.broadcast_to(tri[:, None, :], tri.shape + (3,))
    mloc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M_p = _coo(I, J, area[:, None, None] * mloc, (nv, nv))
    S_p = _coo(I, J, area[:, None, None] * np.einsum("tic,tjc->tij", grads, grads),
               (nv, nv))

    eye2 = sp.identity(2, format="csr")
    M_v = as_csr(sp.kron(M_p, eye2, format="csr"))
    A_v = as_csr(sp.kron(S_p, eye2, format="csr"))

    # coupling: entry area/3 * grad(lambda_grad_vertex)[c], test vertex i
    rows, cols, vals = [], [], []
    for c in range(2):
        g = (area / 3.0)[:, None, None] * np.broadcast_to(
            grads[:, None, :, c], (len(tri), 3, 3))    # [t, test, grad]
        rows.append(2 * I + c)
        cols.append(J)
        vals.append(g)
    rows, cols, vals = (np.stack(a) for a in (rows, cols, vals))
    G = _coo(rows, cols, vals, (2 * nv, nv))
    # D[i,(j,c)]: test pressure vertex i, differentiated velocity vertex j
    comp = np.arange(2)[:, None, None, None]
    D = _coo(np.stack([I, I]), 2 * np.stack([J, J]) + comp, vals, (nv, 2 * nv))
    return FeOperators(M_v, A_v, M_p, S_p, G, D)


def dirichlet_matrix(A, dofs):
    """Symmetric elimination of ``dofs``.

    Returns the eliminated matrix (rows and columns of ``dofs`` replaced by
    the identity) and the coupling block ``A[free, dofs]`` padded to full
    row count, used to move known values to the right-hand side.
    """
    A = as_csr(A)
    n = A.shape[0]
    mask = np.zeros(n)
    mask[dofs] = 1.0
    keep = sp.diags(1.0 - mask)
    A_elim = as_csr(keep @ A @ keep + sp.diags(mask))
    A_elim.eliminate_zeros()
    coupling = as_csr(keep @ A[:, dofs])
    return A_elim, coupling


def dirichlet_rhs(b, coupling, dofs, values):
    b = np.array(b, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values):
        b -= coupling @ values
    b[dofs] = values
    return b


def apply_dirichlet(A, b, dofmap: DofMap, boundary_values=None):
    """Impose velocity Dirichlet data by symmetric elimination.

    Parameters
    ----------
    boundary_values : FieldVec or ndarray, optional
        Full-length velocity coefficients; only the boundary entries are
        read.  ``None`` means homogeneous data.
    """
    dofs = dofmap.boundary_velocity_dofs
    if boundary_values is None:
        g = np.zeros(dofs.size)
    else:
        coeffs = getattr(boundary_values, "coefficients", boundary_values)
        g = np.asarray(coeffs, dtype=float)[dofs]
    A_elim, coupling = dirichlet_matrix(A, dofs)
    return A_elim, dirichlet_rhs(b, coupling, dofs, g)


# ---------------------------------------------------------------------------
# quadrature-based evaluation

class QuadratureSampler:
    """Quadrature points, weights and P1 basis data for one mesh and rule."""

    def __init__(self, mesh: TriMesh, rule: QuadratureRule = DEGREE5):
        self.mesh = mesh
        self.rule = rule
        area, grads = _geometry(mesh)
        self.grads = grads                                  # (nt, 3, 2)
        lam = rule.points                                   # (nq, 3)
        p = mesh.vertices[mesh.triangles]                   # (nt, 3, 2)
        self.x = p[..., 0] @ lam.T                          # (nt, nq)
        self.y = p[..., 1] @ lam.T
        self.weights = area[:, None] * rule.weights[None, :]
        self._cache = {}

    def _term(self, term, which):
        key = (term, which)
        arr = self._cache.get(key)
        if arr is None:
            fn = term.value if which == "v" else term.gradient
            arr = np.asarray(fn(self.x, self.y), dtype=float)
            arr.setflags(write=False)
            self._cache[key] = arr
        return arr

    def field_values(self, field: AnalyticField, t) -> np.ndarray:
        """Values at quadrature points, shape ``(n_components, nt, nq)``."""
        if field.separable:
            out = None
            for term in field.terms:
                part = term.time_factor(t) * self._term(term, "v")
                out = part if out is None else out + part
            return out
        return field(self.x, self.y, t)

    def field_gradients(self, field: AnalyticField, t) -> np.ndarray:
        """Gradients at quadrature points, shape ``(n_components, 2, nt, nq)``."""
        if field.separable:
            out = None
            for term in field.terms:
                part = term.time_factor(t) * self._term(term, "g")
                out = part if out is None else out + part
            return out
        return field.gradient(self.x, self.y, t)

    def fe_values(self, vertex_coeffs) -> np.ndarray:
        c = np.asarray(vertex_coeffs)[self.mesh.triangles]   # (nt, 3)
        return c @ self.rule.points.T

    def fe_gradients(self, vertex_coeffs) -> np.ndarray:
        c = np.asarray(vertex_coeffs)[self.mesh.triangles]
        return np.einsum("tk,tkd->td", c, self.grads)        # (nt, 2)

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def l2_norm(self, field: AnalyticField, t) -> float:
        v = self.field_values(field, t)
        return float(np.sqrt(np.sum(self.weights * np.sum(v * v, axis=0))))

    def errors(self, field: AnalyticField, coeffs, kind, t, component=None,
               gradient=True):
        """L2 and H1-seminorm errors of an FE field against ``field``.

        ``component`` restricts a velocity error to one component.
        """
        coeffs = np.asarray(coeffs)
        if kind == "velocity":
            comps = [coeffs[0::2], coeffs[1::2]]
        else:
            comps = [coeffs]
        selected = range(len(comps)) if component is None else [component]
        exact = self.field_values(field, t)
        l2 = 0.0
        for c in selected:
            d = exact[c] - self.fe_values(comps[c])
            l2 += np.sum(self.weights * d * d)
        if not gradient or not field.has_gradient:
            return float(np.sqrt(l2)), float("nan")
        dexact = self.field_gradients(field, t)
        h1 = 0.0
        for c in selected:
            g = self.fe_gradients(comps[c])
            for k in range(2):
                d = dexact[c, k] - g[:, k, None]
                h1 += np.sum(self.weights * d * d)
        return float(np.sqrt(l2)), float(np.sqrt(h1))


class LoadAssembler:
    """Velocity load vectors ``<f(t), phi_i>`` by quadrature.

    For separable forcing the spatial load of each term is assembled once;
    afterwards ``assemble`` is a short linear combination that equals the
    quadrature result for every ``t``.
    """

    def __init__(self, mesh: TriMesh, dofmap: DofMap, rule: QuadratureRule = DEGREE5):
        self.mesh = mesh
        self.dofmap = dofmap
        self.sampler = QuadratureSampler(mesh, rule)
        self._term_loads = {}

    def _from_values(self, vals):
        # vals: (ncomp, nt, nq) -> nodal loads
        s = self.sampler
        loc = (vals * s.weights) @ s.rule.points             # (ncomp, nt, 3)
        tri = self.mesh.triangles.ravel()
        nv = self.mesh.n_vertices
        ncomp = vals.shape[0]
        out = np.empty(ncomp * nv)
        for c in range(ncomp):
            out[c::ncomp] = np.bincount(tri, weights=loc[c].ravel(), minlength=nv)
        return out

    def assemble(self, field: AnalyticField, t) -> np.ndarray:
        if not field.separable:
            return self._from_values(self.sampler.field_values(field, t))
        out = np.zeros(field.n_components * self.mesh.n_vertices)
        for term in field.terms:
            vec = self._term_loads.get(term)
            if vec is None:
                vec = self._from_values(np.asarray(term.value(self.sampler.x,
                                                              self.sampler.y)))
                vec.setflags(write=False)
                self._term_loads[term] = vec
            out += term.time_factor(t) * vec
        return out


def _kind_of(field: AnalyticField, kind):
    if kind is not None:
        return kind
    return "velocity" if field.n_components == 2 else "pressure"


def interpolate(mesh: TriMesh, dofmap: DofMap, f: AnalyticField, t, kind=None) -> FieldVec:
    """Lagrange (vertex-value) interpolant of ``f(., t)``."""
    kind = _kind_of(f, kind)
    vals = f(mesh.vertices[:, 0], mesh.vertices[:, 1], t)    # (ncomp, nv)
    coeffs = vals.T.ravel() if kind == "velocity" else vals[0].copy()
    return FieldVec(coeffs, kind, float(t))


def error_norms(mesh: TriMesh, dofmap: DofMap, fh: FieldVec, f_exact: AnalyticField,
                t, rule: QuadratureRule = DEGREE5, component=None):
    """``(||f - fh||_L2, |f - fh|_H1)`` by triangle quadrature.

    The H1 part is ``nan`` when ``f_exact`` carries no gradient.
    """
    expected = 2 if fh.kind == "velocity" else 1
    if f_exact.n_components != expected:
        raise ValueError("field kinds do not match")
    return QuadratureSampler(mesh, rule).errors(f_exact, fh.coefficients, fh.kind,
                                                t, component=component)


def mean_zero(p, M_p):
    """Subtract the mass-weighted mean so that ``1^T M_p p = 0``."""
    coeffs = np.asarray(getattr(p, "coefficients", p), dtype=float)
    w = np.asarray(M_p.sum(axis=0)).ravel()
    out = coeffs - (w @ coeffs) / w.sum()
    if isinstance(p, FieldVec):
        if p.kind != "pressure":
            raise ValueError("mean_zero expects a pressure field")
        return FieldVec(out, "pressure", p.time)
    return out


# ---------------------------------------------------------------------------
# bundle

@dataclass(frozen=True, eq=False)
class FeDiscretization:
    """Mesh, DOFs, operators and quadrature helpers shared by the solvers."""

    mesh: TriMesh
    dofmap: DofMap
    ops: FeOperators
    loads: LoadAssembler
    samplers: dict

    def sampler(self, rule: QuadratureRule) -> QuadratureSampler:
        s = self.samplers.get(rule.name)
        if s is None:
            s = self.samplers[rule.name] = QuadratureSampler(self.mesh, rule)
        return s


def discretize(N: int) -> FeDiscretization:
    from .mesh import build_structured_mesh

    mesh = build_structured_mesh(N)
    dofmap = build_dofmap(mesh)
    ops = assemble_operators(mesh, dofmap)
    loads = LoadAssembler(mesh, dofmap, DEGREE5)
    return FeDiscretization(mesh, dofmap, ops, loads, {DEGREE5.name: loads.sampler})
