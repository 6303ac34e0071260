"""Structured triangulations of the unit square.

Each of the ``N x N`` grid squares is cut along its south-west to north-east
diagonal.  Vertices are numbered row by row (``index = j*(N+1) + i`` where
``i`` counts along x and ``j`` along y), which keeps every downstream DOF
numbering and output file reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["TriMesh", "build_structured_mesh", "write_mesh_csv"]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangulation of ``[0, 1]^2``.

    Attributes
    ----------
    n_cells_per_side : int
        Grid parameter ``N``.
    vertices : (n_vertices, 2) ndarray
        Vertex coordinates.
    triangles : (n_triangles, 3) ndarray of int
        Vertex indices, counterclockwise.
    boundary_vertex : (n_vertices,) ndarray of bool
        True on the boundary of the square.
    h : float
        Nominal mesh size ``1/N`` (used to label convergence tables).
    """

    n_cells_per_side: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex: np.ndarray
    h: float

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def diameter(self) -> float:
        """Largest edge length over all triangles (``sqrt(2)/N`` here)."""
        p = self.vertices[self.triangles]
        lengths = [np.linalg.norm(p[:, a] - p[:, b], axis=1)
                   for a, b in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(lengths))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and the number of triangles sharing each."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts


def build_structured_mesh(N: int) -> TriMesh:
    """Build the ``N x N`` SWNE mesh of the unit square.

    Raises
    ------
    ValueError
        If ``N < 1``.
    """
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    s = np.linspace(0.0, 1.0, N + 1)
    xx, yy = np.meshgrid(s, s)            # rows vary in y
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    j, i = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    a = (j * (N + 1) + i).ravel()
    b = a + 1                  # east
    c = a + N + 2              # north-east
    d = a + N + 1              # north
    # lower-right and upper-left halves of each square, interleaved per cell
    tris = np.empty((2 * N * N, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])

    ii = np.tile(np.arange(N + 1), N + 1)
    jj = np.repeat(np.arange(N + 1), N + 1)
    boundary = (ii == 0) | (ii == N) | (jj == 0) | (jj == N)
    return TriMesh(N, _frozen(vertices), _frozen(tris), _frozen(boundary), 1.0 / N)


def write_mesh_csv(mesh: TriMesh, directory) -> tuple[Path, Path]:
    """Dump ``vertices.csv`` (index, x, y, boundary) and ``triangles.csv``
    (index, v0, v1, v2) for debugging."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vpath, tpath = directory / "vertices.csv", directory / "triangles.csv"
    with open(vpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "boundary"])
        for k, ((x, y), bnd) in enumerate(zip(mesh.vertices, mesh.boundary_vertex)):
            w.writerow([k, repr(float(x)), repr(float(y)), int(bnd)])
    with open(tpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "v0", "v1", "v2"])
        for k, tri in enumerate(mesh.triangles):
            w.writerow([k, *map(int, tri)])
    return vpath, tpath
