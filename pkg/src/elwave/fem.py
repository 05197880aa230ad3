"""Vector P1 finite elements for planar elasticity forms.

Displacement and velocity fields live in the space of continuous piecewise
linear vector fields on a structured triangulation, with degrees of freedom
ordered component-major per vertex: dof(v, c) = 2 v + c.  The module provides
symmetric assembly of the mass, gradient and elasticity forms, homogeneous
Dirichlet elimination, nodal interpolation, L2 and elasticity projections,
the discrete elasticity operator, mesh-to-mesh prolongation, and quadrature
of errors against analytic fields.

All element integrals here are exact for the P1 spaces involved; data terms
use the 3-point edge-midpoint rule, which integrates quadratics exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import linalg
from .mesh import Mesh

__all__ = [
    "DofMap",
    "FeFunction",
    "FormMatrices",
    "make_dofmap",
    "assemble_mass",
    "assemble_gradient_stiffness",
    "assemble_elasticity_parts",
    "assemble_elasticity",
    "apply_dirichlet",
    "interpolate_nodal",
    "l2_project",
    "elasticity_project",
    "discrete_L",
    "fe_norm",
    "prolong",
    "eval_fe",
    "eval_fe_grad",
    "quadrature_error",
]

# P1 basis values at the three edge midpoints (rows) per local vertex (cols).
_MIDPOINT_BASIS = np.array(
    [
        [0.5, 0.5, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
    ]
)


@dataclass(frozen=True)
class DofMap:
    """Vector P1 dof layout plus cached element geometry.

    Attributes
    ----------
    mesh : Mesh
    n_dofs : int
        2 * n_vertices.
    tri_dofs : ndarray, shape (nt, 6)
        Global dof of local dof 2 * local_vertex + component.
    areas : ndarray, shape (nt,)
    grads : ndarray, shape (nt, 3, 2)
        Gradients of the scalar barycentric basis functions.
    constrained : ndarray
        Dofs fixed by the homogeneous Dirichlet condition (both components
        of every boundary vertex).
    free : ndarray
        Complement of `constrained`.
    """

    mesh: Mesh
    n_dofs: int
    tri_dofs: np.ndarray
    areas: np.ndarray
    grads: np.ndarray
    constrained: np.ndarray
    free: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices


@dataclass
class FeFunction:
    """Coefficient vector of a vector P1 field."""

    dofmap: DofMap
    coeffs: np.ndarray

    def vertex_values(self) -> np.ndarray:
        """View of the coefficients as an (n_vertices, 2) array."""
        return self.coeffs.reshape(-1, 2)


def make_dofmap(mesh: Mesh) -> DofMap:
    tris = mesh.triangles
    p = mesh.vertices[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * det
    if np.any(areas <= 0):
        raise ValueError("triangulation contains non-positive areas")

    # grad lambda_i = rot90(opposite edge) / (2 area)
    grads = np.empty((tris.shape[0], 3, 2))
    for i in range(3):
        a = p[:, (i + 1) % 3]
        b = p[:, (i + 2) % 3]
        grads[:, i, 0] = a[:, 1] - b[:, 1]
        grads[:, i, 1] = b[:, 0] - a[:, 0]
    grads /= det[:, None, None]

    tri_dofs = np.empty((tris.shape[0], 6), dtype=np.int64)
    tri_dofs[:, 0::2] = 2 * tris
    tri_dofs[:, 1::2] = 2 * tris + 1

    constrained = np.sort(np.concatenate([2 * mesh.boundary, 2 * mesh.boundary + 1]))
    free = np.setdiff1d(np.arange(2 * mesh.n_vertices), constrained, assume_unique=True)
    return DofMap(mesh, 2 * mesh.n_vertices, tri_dofs, areas, grads, constrained, free)


def _scatter(dofmap: DofMap, local: np.ndarray) -> sp.csr_matrix:
    """Accumulate (nt, 6, 6) element matrices into a global CSR matrix."""
    rows = np.repeat(dofmap.tri_dofs, 6, axis=1).ravel()
    cols = np.tile(dofmap.tri_dofs, (1, 6)).ravel()
    mat = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(dofmap.n_dofs, dofmap.n_dofs)
    ).tocsr()
    mat.eliminate_zeros()
    return mat


def assemble_mass(dofmap: DofMap) -> sp.csr_matrix:
    """Vector mass matrix; component blocks are the scalar P1 mass matrix."""
    scalar = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local = np.zeros((dofmap.areas.size, 6, 6))
    for c in range(2):
        local[:, c::2, c::2] = dofmap.areas[:, None, None] * scalar
    return _scatter(dofmap, local)


def assemble_gradient_stiffness(dofmap: DofMap) -> sp.csr_matrix:
    """Componentwise full-gradient form, the H1 seminorm matrix."""
    g = dofmap.grads
    scalar = np.einsum("tik,tjk->tij", g, g) * dofmap.areas[:, None, None]
    local = np.zeros((dofmap.areas.size, 6, 6))
    for c in range(2):
        local[:, c::2, c::2] = scalar
    return _scatter(dofmap, local)


def _div_eps_tables(dofmap: DofMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-element divergence and strain of the six local basis fields.

    Returns (div, eps) with div shape (nt, 6) and eps shape (nt, 6, 4); the
    last axis stores the strain tensor flattened as (11, 12, 21, 22).
    """
    nt = dofmap.areas.size
    g = dofmap.grads
    div = np.zeros((nt, 6))
    eps = np.zeros((nt, 6, 4))
    for i in range(3):
        gx = g[:, i, 0]
        gy = g[:, i, 1]
        # component 0 basis field (phi_i, 0)
        div[:, 2 * i] = gx
        eps[:, 2 * i, 0] = gx
        eps[:, 2 * i, 1] = 0.5 * gy
        eps[:, 2 * i, 2] = 0.5 * gy
        # component 1 basis field (0, phi_i)
        div[:, 2 * i + 1] = gy
        eps[:, 2 * i + 1, 1] = 0.5 * gx
        eps[:, 2 * i + 1, 2] = 0.5 * gx
        eps[:, 2 * i + 1, 3] = gy
    return div, eps


def assemble_elasticity_parts(dofmap: DofMap) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Unit-coefficient (div, div) and (eps, eps) stiffness matrices."""
    div, eps = _div_eps_tables(dofmap)
    w = dofmap.areas[:, None, None]
    local_div = np.einsum("tp,tq->tpq", div, div) * w
    local_eps = np.einsum("tpk,tqk->tpq", eps, eps) * w
    return _scatter(dofmap, local_div), _scatter(dofmap, local_eps)


def assemble_elasticity(
    dofmap: DofMap,
    lam: float,
    mu: float,
    parts: tuple[sp.csr_matrix, sp.csr_matrix] | None = None,
) -> sp.csr_matrix:
    """Elasticity form lam (div u, div v) + mu (eps(u), eps(v)).

    The strain pairing is the plain Frobenius product.  `parts` may pass
    previously assembled unit-coefficient matrices to avoid reassembly.
    """
    if mu <= 0:
        raise ValueError(f"shear coefficient must be positive, got mu={mu}")
    if lam < 0:
        raise ValueError(f"compression coefficient must be nonnegative, got lam={lam}")
    a_div, a_eps = parts if parts is not None else assemble_elasticity_parts(dofmap)
    out = (a_div * lam + a_eps * mu).tocsr()
    out.eliminate_zeros()
    return out


def apply_dirichlet(a: sp.csr_matrix, constrained: np.ndarray) -> sp.csr_matrix:
    """Symmetric elimination: zero constrained rows and columns, unit diagonal.

    Right-hand sides must be zeroed on the constrained dofs by the caller.
    """
    coo = a.tocoo()
    n = a.shape[0]
    is_con = np.zeros(n, dtype=bool)
    is_con[constrained] = True
    keep = ~(is_con[coo.row] | is_con[coo.col])
    rows = np.concatenate([coo.row[keep], constrained])
    cols = np.concatenate([coo.col[keep], constrained])
    data = np.concatenate([coo.data[keep], np.ones(constrained.size)])
    out = sp.coo_matrix((data, (rows, cols)), shape=a.shape).tocsr()
    out.eliminate_zeros()
    return out


@dataclass(frozen=True)
class FormMatrices:
    """The four quadratic-form matrices used for norms and energies."""

    mass: sp.csr_matrix
    grad: sp.csr_matrix
    a_div: sp.csr_matrix
    a_eps: sp.csr_matrix

    @classmethod
    def assemble(cls, dofmap: DofMap) -> "FormMatrices":
        a_div, a_eps = assemble_elasticity_parts(dofmap)
        return cls(assemble_mass(dofmap), assemble_gradient_stiffness(dofmap), a_div, a_eps)


_NORM_KINDS = ("L2", "H1-semi", "div", "eps")


def fe_norm(u: FeFunction, kind: str, forms: FormMatrices) -> float:
    """Quadratic-form norm of a P1 field; kind in {L2, H1-semi, div, eps}."""
    mat = {
        "L2": forms.mass,
        "H1-semi": forms.grad,
        "div": forms.a_div,
        "eps": forms.a_eps,
    }.get(kind)
    if mat is None:
        raise ValueError(f"unknown norm kind {kind!r}, expected one of {_NORM_KINDS}")
    x = u.coeffs
    return float(np.sqrt(max(x @ (mat @ x), 0.0)))


def _as_pointwise(f, t: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, FeFunction):
        return lambda pts: eval_fe(f, pts)
    if t is None:
        return f
    return lambda pts: f(t, pts)


def interpolate_nodal(f, dofmap: DofMap) -> FeFunction:
    """Nodal interpolant: evaluate the field at every vertex.

    Raises
    ------
    ValueError
        If the field returns a wrong shape or a non-finite value; the message
        names the first offending vertex.
    """
    fn = _as_pointwise(f)
    vals = np.asarray(fn(dofmap.mesh.vertices), dtype=np.float64)
    if vals.shape != (dofmap.n_vertices, 2):
        raise ValueError(f"field returned shape {vals.shape}, expected ({dofmap.n_vertices}, 2)")
    bad = ~np.isfinite(vals)
    if bad.any():
        v = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(f"field is not finite at vertex {v} = {tuple(dofmap.mesh.vertices[v])}")
    return FeFunction(dofmap, vals.reshape(-1).copy())


def _edge_midpoints(dofmap: DofMap) -> np.ndarray:
    p = dofmap.mesh.vertices[dofmap.mesh.triangles]
    return 0.5 * (p + np.roll(p, -1, axis=1))


def _load_vector(dofmap: DofMap, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """(f, phi_i) for all dofs via the edge-midpoint rule."""
    mids = _edge_midpoints(dofmap)
    fv = np.asarray(fn(mids.reshape(-1, 2)), dtype=np.float64).reshape(-1, 3, 2)
    w = dofmap.areas / 3.0
    contrib = np.einsum("t,ki,tkc->tic", w, _MIDPOINT_BASIS, fv)
    load = np.zeros(dofmap.n_dofs)
    np.add.at(load, dofmap.tri_dofs.reshape(-1, 3, 2), contrib)
    return load


def l2_project(
    f,
    dofmap: DofMap,
    mass_handle: linalg.SolverHandle,
    constrained: np.ndarray | None = None,
) -> FeFunction:
    """L2 projection onto the P1 space, or its Dirichlet-constrained subspace.

    With `constrained` given, `mass_handle` must hold the correspondingly
    eliminated mass matrix and the projection lands in the subspace with
    zero boundary values.  Reproduces any P1 field of the target space on
    the same mesh to solver tolerance.
    """
    load = _load_vector(dofmap, _as_pointwise(f))
    if constrained is not None:
        load[constrained] = 0.0
    x = linalg.solve(mass_handle, load)
    if constrained is not None:
        x[constrained] = 0.0
    return FeFunction(dofmap, x)


def elasticity_project(
    w,
    dofmap: DofMap,
    lam: float,
    mu: float,
    stiffness_handle: linalg.SolverHandle,
    w_grad: Callable[[np.ndarray], np.ndarray] | None = None,
    a_full: sp.csr_matrix | None = None,
) -> FeFunction:
    """Projection in the elasticity form onto the Dirichlet-constrained space.

    Parameters
    ----------
    w : FeFunction on the same mesh, or pointwise field
        The target; it must vanish on the domain boundary.
    w_grad : callable, optional
        Jacobian of a pointwise target, pts -> (n, 2, 2) with entry
        [p, i, j] = d w_i / d x_j.  Required unless w is an FeFunction.
    stiffness_handle : SolverHandle
        Prepared Dirichlet-eliminated elasticity matrix for (lam, mu).
    """
    if isinstance(w, FeFunction):
        if w.dofmap.mesh is not dofmap.mesh and w.dofmap.n_dofs != dofmap.n_dofs:
            raise ValueError("FeFunction target must live on the same mesh")
        bvals = w.vertex_values()[dofmap.mesh.boundary]
        if np.abs(bvals).max(initial=0.0) > 1e-10:
            raise ValueError("target violates the homogeneous boundary condition")
        if a_full is None:
            a_full = assemble_elasticity(dofmap, lam, mu)
        load = a_full @ w.coeffs
    else:
        if w_grad is None:
            raise ValueError("pointwise targets need w_grad for the energy pairing")
        bvals = np.asarray(w(dofmap.mesh.vertices[dofmap.mesh.boundary]))
        if bvals.size and np.abs(bvals).max() > 1e-10:
            raise ValueError("target violates the homogeneous boundary condition")
        mids = _edge_midpoints(dofmap)
        jac = np.asarray(w_grad(mids.reshape(-1, 2)), dtype=np.float64).reshape(-1, 3, 2, 2)
        div_w = jac[..., 0, 0] + jac[..., 1, 1]
        eps_w = 0.5 * (jac + np.swapaxes(jac, -1, -2))
        div_b, eps_b = _div_eps_tables(dofmap)
        eps_b = eps_b.reshape(-1, 6, 2, 2)
        w3 = dofmap.areas / 3.0
        contrib = lam * np.einsum("t,tk,tp->tp", w3, div_w, div_b)
        contrib += mu * np.einsum("t,tkij,tpij->tp", w3, eps_w, eps_b)
        load = np.zeros(dofmap.n_dofs)
        np.add.at(load, dofmap.tri_dofs, contrib)
    load[dofmap.constrained] = 0.0
    x = linalg.solve(stiffness_handle, load)
    x[dofmap.constrained] = 0.0
    return FeFunction(dofmap, x)


def discrete_L(
    w: FeFunction,
    mass_handle: linalg.SolverHandle,
    a: sp.csr_matrix,
    constrained: np.ndarray | None = None,
) -> FeFunction:
    """Discrete elasticity operator: x with M x = -A w.

    The defining identity -(x, v) = lam (div w, div v) + mu (eps(w), eps(v))
    then holds for every test field v of the target space.  With
    `constrained` given, `mass_handle` must hold the eliminated mass matrix;
    the result then lies in the zero-boundary subspace and the identity
    holds for every test field of that subspace.
    """
    rhs = -(a @ w.coeffs)
    if constrained is not None:
        rhs[constrained] = 0.0
    x = linalg.solve(mass_handle, rhs)
    if constrained is not None:
        x[constrained] = 0.0
    return FeFunction(w.dofmap, x)


def prolong(u: FeFunction, fine_dofmap: DofMap) -> FeFunction:
    """Exact embedding of a P1 field into the once-refined mesh.

    New vertices sit at parent edge midpoints (cell centers lie on the parent
    diagonal), so the embedded coefficients are copies and two-point means.
    """
    coarse = u.dofmap.mesh
    fine = fine_dofmap.mesh
    if fine.domain != coarse.domain or fine.nx != 2 * coarse.nx or fine.ny != 2 * coarse.ny:
        raise ValueError("target dofmap is not the uniform refinement of the source mesh")

    cv = u.vertex_values()
    nxf, nyf = fine.nx, fine.ny
    ii, jj = np.meshgrid(np.arange(nxf + 1), np.arange(nyf + 1))
    out = np.empty((fine.n_vertices, 2))

    def cidx(i, j):
        return j * (coarse.nx + 1) + i

    even = (ii % 2 == 0) & (jj % 2 == 0)
    hmid = (ii % 2 == 1) & (jj % 2 == 0)
    vmid = (ii % 2 == 0) & (jj % 2 == 1)
    cmid = (ii % 2 == 1) & (jj % 2 == 1)

    fid = (jj * (nxf + 1) + ii).ravel()
    ii = ii.ravel()
    jj = jj.ravel()
    for mask_glob, get in (
        (even.ravel(), lambda i, j: cv[cidx(i // 2, j // 2)]),
        (hmid.ravel(), lambda i, j: 0.5 * (cv[cidx((i - 1) // 2, j // 2)] + cv[cidx((i + 1) // 2, j // 2)])),
        (vmid.ravel(), lambda i, j: 0.5 * (cv[cidx(i // 2, (j - 1) // 2)] + cv[cidx(i // 2, (j + 1) // 2)])),
        (cmid.ravel(), lambda i, j: 0.5 * (cv[cidx((i - 1) // 2, (j - 1) // 2)] + cv[cidx((i + 1) // 2, (j + 1) // 2)])),
    ):
        out[fid[mask_glob]] = get(ii[mask_glob], jj[mask_glob])
    return FeFunction(fine_dofmap, out.reshape(-1))


def _locate(mesh: Mesh, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates for each point."""
    x0, x1, y0, y1 = mesh.domain
    eps = 1e-12 * max(x1 - x0, y1 - y0)
    if (
        pts[:, 0].min() < x0 - eps
        or pts[:, 0].max() > x1 + eps
        or pts[:, 1].min() < y0 - eps
        or pts[:, 1].max() > y1 + eps
    ):
        raise ValueError("evaluation point outside the mesh domain")
    fx = np.clip((pts[:, 0] - x0) / (x1 - x0) * mesh.nx, 0.0, mesh.nx * (1 - 1e-16))
    fy = np.clip((pts[:, 1] - y0) / (y1 - y0) * mesh.ny, 0.0, mesh.ny * (1 - 1e-16))
    ci = fx.astype(np.int64)
    cj = fy.astype(np.int64)
    xi = fx - ci
    eta = fy - cj
    cell = cj * mesh.nx + ci
    lower = eta <= xi
    tri = np.where(lower, cell, cell + mesh.nx * mesh.ny)
    lam = np.empty((pts.shape[0], 3))
    # lower triangle (n00, n10, n11): 1-xi, xi-eta, eta
    lam[lower, 0] = 1.0 - xi[lower]
    lam[lower, 1] = xi[lower] - eta[lower]
    lam[lower, 2] = eta[lower]
    up = ~lower
    # upper triangle (n00, n11, n01): 1-eta, xi, eta-xi
    lam[up, 0] = 1.0 - eta[up]
    lam[up, 1] = xi[up]
    lam[up, 2] = eta[up] - xi[up]
    return tri, lam


def eval_fe(u: FeFunction, pts: np.ndarray) -> np.ndarray:
    """Evaluate a P1 field at arbitrary points of its domain."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    tri, lam = _locate(u.dofmap.mesh, pts)
    vals = u.vertex_values()[u.dofmap.mesh.triangles[tri]]
    return np.einsum("pk,pkc->pc", lam, vals)


def eval_fe_grad(u: FeFunction, pts: np.ndarray) -> np.ndarray:
    """Piecewise-constant Jacobian of a P1 field at the given points."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    tri, _ = _locate(u.dofmap.mesh, pts)
    vals = u.vertex_values()[u.dofmap.mesh.triangles[tri]]
    return np.einsum("pkc,pkj->pcj", vals, u.dofmap.grads[tri])


def quadrature_error(
    u: FeFunction,
    exact: Callable[[np.ndarray], np.ndarray],
    exact_grad: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[float, float]:
    """(L2, H1-semi) distance between a P1 field and an analytic field.

    Uses the edge-midpoint rule per triangle.  The H1 part is skipped (nan)
    when `exact_grad` is not given.
    """
    dofmap = u.dofmap
    mids = _edge_midpoints(dofmap)
    flat = mids.reshape(-1, 2)
    w = dofmap.areas / 3.0

    vals = u.vertex_values()[dofmap.mesh.triangles]
    uh = np.einsum("ki,tic->tkc", _MIDPOINT_BASIS, vals)
    diff = uh - np.asarray(exact(flat)).reshape(-1, 3, 2)
    err_l2 = float(np.sqrt(np.einsum("t,tkc->", w, diff**2)))

    if exact_grad is None:
        return err_l2, float("nan")
    gh = np.einsum("tkc,tkj->tcj", vals, dofmap.grads)
    gdiff = gh[:, None, :, :] - np.asarray(exact_grad(flat)).reshape(-1, 3, 2, 2)
    err_h1 = float(np.sqrt(np.einsum("t,tkij->", w, gdiff**2)))
    return err_l2, err_h1
