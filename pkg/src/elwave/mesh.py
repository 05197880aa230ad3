"""Structured triangulations of axis-aligned rectangles.

Every mesh is a uniform nx-by-ny grid of cells, each cell split into two
triangles along its lower-left to upper-right diagonal.  Uniform refinement
halves the cell size; vertex coordinates are computed so that every parent
vertex reappears bitwise-identically in the child mesh, which lets nested
meshes share nodal values without tolerance games.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Mesh", "build_rect_mesh", "refine_uniform", "boundary_vertex_set", "dump_text"]


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a rectangle.

    Attributes
    ----------
    domain : tuple
        (x0, x1, y0, y1) bounds of the rectangle.
    nx, ny : int
        Number of cells per direction.
    vertices : ndarray, shape (n_vertices, 2)
        Vertex coordinates, ordered row-major (j * (nx+1) + i).
    triangles : ndarray, shape (n_triangles, 3)
        Vertex indices, counterclockwise.
    boundary : ndarray
        Sorted indices of vertices on the rectangle boundary.
    h : float
        Maximum edge length over all triangles.
    """

    domain: tuple[float, float, float, float]
    nx: int
    ny: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    h: float

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def vertex_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i


def _axis_coords(a: float, b: float, n: int) -> np.ndarray:
    """Grid points on [a, b] with exact endpoints.

    Interior points use a + (i * (b - a)) / n.  Doubling n maps even indices
    to bitwise-identical values, which is what refinement nesting relies on.
    """
    length = b - a
    x = a + (np.arange(n + 1, dtype=np.float64) * length) / n
    x[0] = a
    x[n] = b
    return x


def build_rect_mesh(domain: tuple[float, float, float, float], nx: int, ny: int) -> Mesh:
    """Triangulate [x0, x1] x [y0, y1] with nx * ny cells, two triangles each.

    Raises
    ------
    ValueError
        If nx or ny is not positive, or the rectangle is degenerate.
    """
    x0, x1, y0, y1 = map(float, domain)
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain!r}")

    xs = _axis_coords(x0, x1, nx)
    ys = _axis_coords(y0, y1, ny)
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    # Cell (i, j) has corners n00, n10, n01, n11; the diagonal runs n00 -> n11.
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii = ii.ravel()
    jj = jj.ravel()
    n00 = jj * (nx + 1) + ii
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.vstack([lower, upper]).astype(np.int64)

    on_edge = (
        (vertices[:, 0] == x0)
        | (vertices[:, 0] == x1)
        | (vertices[:, 1] == y0)
        | (vertices[:, 1] == y1)
    )
    boundary = np.flatnonzero(on_edge).astype(np.int64)

    p = vertices[triangles]
    edge_lengths = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ]
    )
    h = float(edge_lengths.max())

    return Mesh((x0, x1, y0, y1), nx, ny, vertices, triangles, boundary, h)


def refine_uniform(mesh: Mesh) -> Mesh:
    """One level of uniform refinement (nx, ny doubled).

    Parent vertices appear in the child with identical coordinates and the
    child triangles cover each parent triangle exactly.
    """
    return build_rect_mesh(mesh.domain, 2 * mesh.nx, 2 * mesh.ny)


def boundary_vertex_set(mesh: Mesh) -> np.ndarray:
    """Indices of vertices lying on the rectangle boundary (exact comparison)."""
    return mesh.boundary


def triangle_areas(mesh: Mesh) -> np.ndarray:
    """Signed areas; positive for the counterclockwise orientation used here."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def dump_text(mesh: Mesh, stream) -> None:
    """Write vertices then triangles as plain text, one entity per line."""
    stream.write(f"# mesh nx={mesh.nx} ny={mesh.ny} domain={mesh.domain}\n")
    stream.write(f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles\n")
    for x, y in mesh.vertices:
        stream.write(f"v {float(x)!r} {float(y)!r}\n")
    for a, b, c in mesh.triangles:
        stream.write(f"t {a} {b} {c}\n")
