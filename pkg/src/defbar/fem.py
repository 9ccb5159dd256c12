"""Finite element spaces, quadrature and assembly primitives.

Scalar fields use P1 or P2 Lagrange elements on triangles, vector fields the
two-component versions with interleaved dofs (2*scalar_dof + component).
Volume forms use a degree-4 Dunavant rule (exact for all Taylor-Hood
polynomial products; the rational barrier and permeability integrands carry
quadrature error by design), boundary forms a 2-point Gauss rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .activeset import BarrierDomainError
from .mesh import Mesh

# degree-4 Dunavant rule on the reference triangle (weights sum to 1/2)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
TRI_QP = np.array(
    [
        [_A1, _A1],
        [1.0 - 2.0 * _A1, _A1],
        [_A1, 1.0 - 2.0 * _A1],
        [_A2, _A2],
        [1.0 - 2.0 * _A2, _A2],
        [_A2, 1.0 - 2.0 * _A2],
    ]
)
TRI_QW = 0.5 * np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 2-point Gauss on [0,1]
EDGE_QP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_QW = np.array([0.5, 0.5])


def _bary(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([1.0 - x - y, x, y])


def p1_values(points: np.ndarray) -> np.ndarray:
    return _bary(points)


P1_GRAD_REF = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_values(points: np.ndarray) -> np.ndarray:
    lam = _bary(points)
    v = lam * (2.0 * lam - 1.0)
    # midpoint dof k sits opposite vertex k: edges (1,2), (2,0), (0,1)
    e = np.column_stack(
        [4.0 * lam[:, 1] * lam[:, 2], 4.0 * lam[:, 2] * lam[:, 0], 4.0 * lam[:, 0] * lam[:, 1]]
    )
    return np.hstack([v, e])


def p2_grads(points: np.ndarray) -> np.ndarray:
    """(npts, 6, 2) reference gradients."""
    lam = _bary(points)
    out = np.zeros((points.shape[0], 6, 2))
    for i in range(3):
        out[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * P1_GRAD_REF[i]
    pairs = [(1, 2), (2, 0), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        out[:, 3 + k, :] = 4.0 * (lam[:, i][:, None] * P1_GRAD_REF[j] + lam[:, j][:, None] * P1_GRAD_REF[i])
    return out


P1_AT_QP = p1_values(TRI_QP)
P2_AT_QP = p2_values(TRI_QP)
P1_GRAD_AT_QP = np.broadcast_to(P1_GRAD_REF, (TRI_QP.shape[0], 3, 2))
P2_GRAD_AT_QP = p2_grads(TRI_QP)


class DirichletConflictError(ValueError):
    pass


@dataclass(frozen=True)
class DirichletBC:
    """Fix one velocity/displacement component on edges carrying a boundary tag.

    value is evaluated at dof coordinates (vertices and, for P2, edge midpoints).
    """

    tag: int
    component: int
    value: Callable[[float, float], float]


class Geometry:
    """Per-mesh affine-map data shared by all spaces on the mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        xy = mesh.cell_coords()  # (nc, 3, 2)
        J = np.stack([xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 0]], axis=2)  # columns
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(self.detJ <= 0):
            raise ValueError("mesh contains non-positively-oriented cells")
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        inv[:, 1, 1] = J[:, 0, 0]
        inv /= self.detJ[:, None, None]
        self.invJ = inv  # J^{-1}
        # physical quadrature points: x0 + J @ xi
        self.qpts = xy[:, 0][:, None, :] + np.einsum("cde,qe->cqd", J, TRI_QP)
        self.w = TRI_QW[None, :] * self.detJ[:, None]  # (nc, nq) quadrature weights
        # physical gradients (nc, nq, ndof, 2): gref @ J^{-1}
        self.grad_p1 = np.einsum("qid,cde->cqie", P1_GRAD_AT_QP, inv)
        self.grad_p2 = np.einsum("qid,cde->cqie", P2_GRAD_AT_QP, inv)


def build_edge_index(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """(edges, cell_edges): unique sorted vertex pairs and per-cell edge ids
    ordered as (opposite v0, opposite v1, opposite v2)."""
    cells = mesh.cells
    raw = np.vstack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(3, -1).T
    return edges, cell_edges


class FunctionSpace:
    """Dof management for one element family on one mesh."""

    FAMILIES = ("P1_scalar", "P2_scalar", "P1_vector2", "P2_vector2")

    def __init__(self, family: str, mesh: Mesh, geometry: Optional[Geometry] = None,
                 edges: Optional[np.ndarray] = None, cell_edges: Optional[np.ndarray] = None):
        if family not in self.FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        self.family = family
        self.mesh = mesh
        self.geometry = geometry if geometry is not None else Geometry(mesh)
        nv = mesh.num_vertices
        if "P2" in family:
            if edges is None:
                edges, cell_edges = build_edge_index(mesh)
            self.edges = edges
            self.scalar_cell_dofs = np.hstack([mesh.cells, nv + cell_edges])
            self.num_scalar_dofs = nv + edges.shape[0]
            mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.scalar_dof_coords = np.vstack([mesh.vertices, mid])
        else:
            self.edges = None
            self.scalar_cell_dofs = mesh.cells
            self.num_scalar_dofs = nv
            self.scalar_dof_coords = mesh.vertices
        self.vector = "vector2" in family
        self.num_dofs = 2 * self.num_scalar_dofs if self.vector else self.num_scalar_dofs

    @property
    def basis_at_qp(self) -> np.ndarray:
        return P2_AT_QP if "P2" in self.family else P1_AT_QP

    @property
    def grad_at_qp(self) -> np.ndarray:
        return self.geometry.grad_p2 if "P2" in self.family else self.geometry.grad_p1

    def vector_cell_dofs(self) -> np.ndarray:
        """(nc, 2*nloc) interleaved dof ids [2*s, 2*s+1, ...] per scalar dof."""
        s = self.scalar_cell_dofs
        out = np.empty((s.shape[0], 2 * s.shape[1]), dtype=np.int64)
        out[:, 0::2] = 2 * s
        out[:, 1::2] = 2 * s + 1
        return out

    def values_at_qp(self, coeffs: np.ndarray) -> np.ndarray:
        """Scalar field values at quadrature points, (nc, nq)."""
        local = coeffs[self.scalar_cell_dofs]  # (nc, nloc)
        return np.einsum("ci,qi->cq", local, self.basis_at_qp)

    def vector_values_at_qp(self, coeffs: np.ndarray) -> np.ndarray:
        """Vector field values at quadrature points, (nc, nq, 2)."""
        cx = coeffs[0::2][self.scalar_cell_dofs]
        cy = coeffs[1::2][self.scalar_cell_dofs]
        vx = np.einsum("ci,qi->cq", cx, self.basis_at_qp)
        vy = np.einsum("ci,qi->cq", cy, self.basis_at_qp)
        return np.stack([vx, vy], axis=-1)

    def vector_grads_at_qp(self, coeffs: np.ndarray) -> np.ndarray:
        """Gradient tensor d u_a / d x_b at quadrature points, (nc, nq, 2, 2)."""
        G = self.grad_at_qp  # (nc, nq, nloc, 2)
        cx = coeffs[0::2][self.scalar_cell_dofs]
        cy = coeffs[1::2][self.scalar_cell_dofs]
        gx = np.einsum("ci,cqie->cqe", cx, G)
        gy = np.einsum("ci,cqie->cqe", cy, G)
        return np.stack([gx, gy], axis=2)


def _scatter_matrix(rows_local: np.ndarray, cols_local: np.ndarray, elem: np.ndarray,
                    nrows: int, ncols: int) -> sp.csr_matrix:
    nr = rows_local.shape[1]
    ncl = cols_local.shape[1]
    r = np.repeat(rows_local, ncl, axis=1).ravel()
    c = np.repeat(cols_local[:, None, :], nr, axis=1).ravel()
    return sp.coo_matrix((elem.reshape(-1), (r, c)), shape=(nrows, ncols)).tocsr()


def _scatter_vector(dofs: np.ndarray, elem: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=elem.ravel(), minlength=n)


def scalar_mass(space: FunctionSpace, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """int w phi_i phi_j with optional per-(cell, qpoint) weight."""
    w = space.geometry.w if weight is None else space.geometry.w * weight
    phi = space.basis_at_qp
    elem = np.einsum("cq,qi,qj->cij", w, phi, phi)
    s = space.scalar_cell_dofs
    return _scatter_matrix(s, s, elem, space.num_scalar_dofs, space.num_scalar_dofs)


def scalar_stiffness(space: FunctionSpace, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    w = space.geometry.w if weight is None else space.geometry.w * weight
    G = space.grad_at_qp
    elem = np.einsum("cq,cqie,cqje->cij", w, G, G)
    s = space.scalar_cell_dofs
    return _scatter_matrix(s, s, elem, space.num_scalar_dofs, space.num_scalar_dofs)


def scalar_load(space: FunctionSpace, values_at_qp: np.ndarray) -> np.ndarray:
    """int w(x) phi_i with w given at quadrature points, (nc, nq)."""
    elem = np.einsum("cq,qi->ci", space.geometry.w * values_at_qp, space.basis_at_qp)
    return _scatter_vector(space.scalar_cell_dofs, elem, space.num_scalar_dofs)


def basis_integrals(space: FunctionSpace) -> np.ndarray:
    """int phi_i dx per scalar dof."""
    return scalar_load(space, np.ones_like(space.geometry.w))


def _expand_vector_blocks(elem_scalar: np.ndarray) -> np.ndarray:
    """Same-component expansion of (nc, n, n) scalar element matrices to (nc, 2n, 2n)."""
    nc, n, _ = elem_scalar.shape
    out = np.zeros((nc, 2 * n, 2 * n))
    out[:, 0::2, 0::2] = elem_scalar
    out[:, 1::2, 1::2] = elem_scalar
    return out


def vector_mass(space: FunctionSpace, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    w = space.geometry.w if weight is None else space.geometry.w * weight
    phi = space.basis_at_qp
    elem = _expand_vector_blocks(np.einsum("cq,qi,qj->cij", w, phi, phi))
    d = space.vector_cell_dofs()
    return _scatter_matrix(d, d, elem, space.num_dofs, space.num_dofs)


def vector_laplace(space: FunctionSpace, weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """int w grad(u) : grad(v), componentwise."""
    w = space.geometry.w if weight is None else space.geometry.w * weight
    G = space.grad_at_qp
    elem = _expand_vector_blocks(np.einsum("cq,cqie,cqje->cij", w, G, G))
    d = space.vector_cell_dofs()
    return _scatter_matrix(d, d, elem, space.num_dofs, space.num_dofs)


def vector_elasticity(space: FunctionSpace, mu_coef: float, lam_coef: float,
                      weight: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """int w [2 mu eps(u):eps(v) + lam div(u) div(v)].

    Entry ((i,a),(j,b)) = w [ mu (delta_ab grad phi_i . grad phi_j
                              + d_b phi_i d_a phi_j) + lam d_a phi_i d_b phi_j ].
    """
    w = space.geometry.w if weight is None else space.geometry.w * weight
    G = space.grad_at_qp
    nc, nq, n, _ = G.shape
    gdot = np.einsum("cq,cqie,cqje->cij", w, G, G)
    # cross[c,i,j,a,b] = int w  d_b phi_i  d_a phi_j
    cross = np.einsum("cq,cqib,cqja->cijab", w, G, G)
    elem = np.zeros((nc, 2 * n, 2 * n))
    for a in range(2):
        for b in range(2):
            blk = mu_coef * cross[:, :, :, a, b] + lam_coef * cross[:, :, :, b, a]
            if a == b:
                blk = blk + mu_coef * gdot
            elem[:, a::2, b::2] = blk
    d = space.vector_cell_dofs()
    return _scatter_matrix(d, d, elem, space.num_dofs, space.num_dofs)


def divergence_coupling(vspace: FunctionSpace, qspace: FunctionSpace) -> sp.csr_matrix:
    """B[j, (i,a)] = int psi_j d_a phi_i : pressure-row weak divergence."""
    w = vspace.geometry.w
    G = vspace.grad_at_qp  # (nc, nq, n, 2)
    psi = qspace.basis_at_qp  # (nq, m)
    elem = np.einsum("cq,qj,cqia->cjia", w, psi, G)  # (nc, m, n, 2)
    nc, m, n, _ = elem.shape
    elem = elem.reshape(nc, m, 2 * n)
    rows = qspace.scalar_cell_dofs
    cols = vspace.vector_cell_dofs()
    return _scatter_matrix(rows, cols, elem, qspace.num_scalar_dofs, vspace.num_dofs)


def mixed_vector_scalar(vspace: FunctionSpace, sspace: FunctionSpace,
                        coef_at_qp: np.ndarray, vec_at_qp: np.ndarray) -> sp.csr_matrix:
    """C[(i,a), j] = int w c(x) v_a(x) phi_i psi_j  (velocity-density coupling)."""
    w = vspace.geometry.w * coef_at_qp
    phi = vspace.basis_at_qp
    psi = sspace.basis_at_qp
    elem = np.einsum("cq,cqa,qi,qj->ciaj", w, vec_at_qp, phi, psi)
    nc, n, _, m = elem.shape
    elem = elem.reshape(nc, 2 * n, m)
    rows = vspace.vector_cell_dofs()
    cols = sspace.scalar_cell_dofs
    return _scatter_matrix(rows, cols, elem, vspace.num_dofs, sspace.num_scalar_dofs)


def mixed_gradform_scalar(vspace: FunctionSpace, sspace: FunctionSpace,
                          mu_coef: float, lam_coef: float, u_coeffs: np.ndarray,
                          coef_at_qp: np.ndarray) -> sp.csr_matrix:
    """C[(i,a), j] = int w c(x) [2 mu eps(u):eps(phi_i e_a) + lam div(u) div(phi_i e_a)] psi_j."""
    w = vspace.geometry.w * coef_at_qp
    G = vspace.grad_at_qp
    psi = sspace.basis_at_qp
    gu = vspace.vector_grads_at_qp(u_coeffs)  # (nc, nq, 2, 2)
    eps = 0.5 * (gu + np.swapaxes(gu, 2, 3))
    divu = gu[:, :, 0, 0] + gu[:, :, 1, 1]
    # 2 mu eps(u) : eps(phi_i e_a) = 2 mu eps(u)[a,:] . grad(phi_i)
    s_mu = 2.0 * mu_coef * np.einsum("cqae,cqie->cqia", eps, G)
    s_lam = lam_coef * np.einsum("cq,cqia->cqia", divu, G)
    elem = np.einsum("cq,cqia,qj->ciaj", w, s_mu + s_lam, psi)
    nc, n, _, m = elem.shape
    elem = elem.reshape(nc, 2 * n, m)
    rows = vspace.vector_cell_dofs()
    cols = sspace.scalar_cell_dofs
    return _scatter_matrix(rows, cols, elem, vspace.num_dofs, sspace.num_scalar_dofs)


def weighted_vector_mass_apply(space: FunctionSpace, weight_at_qp: np.ndarray,
                               coeffs: np.ndarray) -> np.ndarray:
    """int w u . v for all test functions v, without assembling the matrix."""
    w = space.geometry.w * weight_at_qp
    uq = space.vector_values_at_qp(coeffs)  # (nc, nq, 2)
    phi = space.basis_at_qp
    elem = np.einsum("cq,cqa,qi->cia", w, uq, phi)  # (nc, nloc, 2)
    nc, n, _ = elem.shape
    dofs = space.vector_cell_dofs()
    return _scatter_vector(dofs, np.swapaxes(elem, 1, 2).reshape(nc, 2 * n)[:, _interleave(n)], space.num_dofs)


def _interleave(n: int) -> np.ndarray:
    """Permutation mapping [x0..xn-1, y0..yn-1] to [x0, y0, x1, y1, ...]."""
    idx = np.empty(2 * n, dtype=np.int64)
    idx[0::2] = np.arange(n)
    idx[1::2] = n + np.arange(n)
    return idx


def weighted_elastic_apply(space: FunctionSpace, mu_coef: float, lam_coef: float,
                           weight_at_qp: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """int w [2 mu eps(u):eps(v) + lam div(u) div(v)] for all test functions v."""
    w = space.geometry.w * weight_at_qp
    G = space.grad_at_qp
    gu = space.vector_grads_at_qp(coeffs)
    eps = 0.5 * (gu + np.swapaxes(gu, 2, 3))
    divu = gu[:, :, 0, 0] + gu[:, :, 1, 1]
    s = 2.0 * mu_coef * np.einsum("cq,cqae,cqie->cia", w, eps, G)
    s += lam_coef * np.einsum("cq,cq,cqia->cia", w, divu, G)
    nc, n, _ = s.shape
    dofs = space.vector_cell_dofs()
    return _scatter_vector(dofs, np.swapaxes(s, 1, 2).reshape(nc, 2 * n)[:, _interleave(n)], space.num_dofs)


def integrate(mesh_or_space, values_at_qp: np.ndarray) -> float:
    """Quadrature of per-(cell, qpoint) values."""
    geo = mesh_or_space.geometry if isinstance(mesh_or_space, FunctionSpace) else Geometry(mesh_or_space)
    return float(np.sum(geo.w * values_at_qp))


def integrate_function(mesh: Mesh, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    geo = Geometry(mesh)
    vals = f(geo.qpts[:, :, 0], geo.qpts[:, :, 1])
    return float(np.sum(geo.w * vals))


# ---------------------------------------------------------------------------
# boundary integrals


def boundary_traction_load(space: FunctionSpace, mesh: Mesh, tag: int,
                           traction: Callable[[float, float], Sequence[float]]) -> np.ndarray:
    """int_{edges with tag} f . v ds on a vector space."""
    out = np.zeros(space.num_dofs)
    sel = mesh.boundary_tags == tag
    edges = mesh.boundary_edges[sel]
    if edges.size == 0:
        return out
    p0 = mesh.vertices[edges[:, 0]]
    p1 = mesh.vertices[edges[:, 1]]
    lengths = np.linalg.norm(p1 - p0, axis=1)
    p2 = "P2" in space.family
    if p2:
        pair_to_edge = {tuple(e): i for i, e in enumerate(space.edges)}
    for k in range(edges.shape[0]):
        va, vb = int(edges[k, 0]), int(edges[k, 1])
        # scalar dofs on the edge and their 1D shape functions at the edge qpoints
        if p2:
            eid = pair_to_edge[tuple(sorted((va, vb)))]
            dofs = [va, vb, mesh.num_vertices + eid]
            t = EDGE_QP
            shape = np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])
        else:
            dofs = [va, vb]
            t = EDGE_QP
            shape = np.column_stack([1 - t, t])
        pts = p0[k][None, :] * (1 - t)[:, None] + p1[k][None, :] * t[:, None]
        fvals = np.array([traction(x, y) for x, y in pts])  # (nq, 2)
        for q in range(t.shape[0]):
            wq = EDGE_QW[q] * lengths[k]
            for c in range(2):
                out[2 * np.array(dofs) + c] += wq * fvals[q, c] * shape[q]
    return out


def boundary_vector_integral(space: FunctionSpace, mesh: Mesh, tag: int,
                             coeffs: np.ndarray) -> np.ndarray:
    """int_{edges with tag} u ds, componentwise (used for flux checks)."""
    total = np.zeros(2)
    sel = mesh.boundary_tags == tag
    edges = mesh.boundary_edges[sel]
    if edges.size == 0:
        return total
    p2 = "P2" in space.family
    if p2:
        pair_to_edge = {tuple(e): i for i, e in enumerate(space.edges)}
    for k in range(edges.shape[0]):
        va, vb = int(edges[k, 0]), int(edges[k, 1])
        length = float(np.linalg.norm(mesh.vertices[vb] - mesh.vertices[va]))
        t = EDGE_QP
        if p2:
            eid = pair_to_edge[tuple(sorted((va, vb)))]
            dofs = np.array([va, vb, mesh.num_vertices + eid])
            shape = np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])
        else:
            dofs = np.array([va, vb])
            shape = np.column_stack([1 - t, t])
        for c in range(2):
            vals = coeffs[2 * dofs + c]
            total[c] += length * float(EDGE_QW @ (shape @ vals))
    return total


# ---------------------------------------------------------------------------
# Dirichlet conditions


def dirichlet_rows(space: FunctionSpace, mesh: Mesh, bcs: Sequence[DirichletBC],
                   offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Global row indices and prescribed values for a vector space's boundary dofs.

    Conflicting prescriptions on a shared dof raise DirichletConflictError.
    """
    if not space.vector:
        raise ValueError("Dirichlet application is supported on vector spaces")
    p2 = "P2" in space.family
    if p2:
        pair_to_edge = {tuple(e): i for i, e in enumerate(space.edges)}
    assigned: dict[int, float] = {}
    for bc in bcs:
        sel = mesh.boundary_tags == bc.tag
        for va, vb in mesh.boundary_edges[sel]:
            sdofs = [int(va), int(vb)]
            if p2:
                sdofs.append(mesh.num_vertices + pair_to_edge[tuple(sorted((int(va), int(vb))))])
            for s in sdofs:
                x, y = space.scalar_dof_coords[s]
                g = float(bc.value(x, y))
                row = offset + 2 * s + bc.component
                if row in assigned and abs(assigned[row] - g) > 1e-12:
                    raise DirichletConflictError(
                        f"dof {row} at ({x:.6g},{y:.6g}) prescribed {assigned[row]:.6g} and {g:.6g}"
                    )
                assigned[row] = g
    rows = np.array(sorted(assigned), dtype=np.int64)
    vals = np.array([assigned[r] for r in rows])
    return rows, vals


def apply_dirichlet_residual(res: np.ndarray, rows: np.ndarray, values: np.ndarray,
                             z: np.ndarray) -> np.ndarray:
    out = res.copy()
    out[rows] = z[rows] - values
    return out


def apply_dirichlet_jacobian(J: sp.spmatrix, rows: np.ndarray) -> sp.csr_matrix:
    """Replace the given rows by identity rows."""
    J = sp.csr_matrix(J)
    n = J.shape[0]
    keep = np.ones(n)
    keep[rows] = 0.0
    unit = np.zeros(n)
    unit[rows] = 1.0
    return (sp.diags(keep) @ J + sp.diags(unit)).tocsr()


# ---------------------------------------------------------------------------
# barrier terms (applied dof-wise on the density block)


def barrier_gradient(rho: np.ndarray, mu: float, eps: float) -> np.ndarray:
    """mu * (-1/(rho+eps) + 1/(1+eps-rho)) per dof; raises outside the enlarged box."""
    if mu == 0.0:
        return np.zeros_like(rho)
    lo = rho + eps
    hi = 1.0 + eps - rho
    if np.any(lo <= 0.0) or np.any(hi <= 0.0):
        raise BarrierDomainError("density dof outside the enlarged feasible interval")
    return mu * (-1.0 / lo + 1.0 / hi)


def barrier_curvature(rho: np.ndarray, mu: float, eps: float) -> np.ndarray:
    """Derivative of barrier_gradient w.r.t. rho, per dof."""
    if mu == 0.0:
        return np.zeros_like(rho)
    lo = rho + eps
    hi = 1.0 + eps - rho
    if np.any(lo <= 0.0) or np.any(hi <= 0.0):
        raise BarrierDomainError("density dof outside the enlarged feasible interval")
    return mu * (1.0 / lo**2 + 1.0 / hi**2)


def barrier_mu_derivative(rho: np.ndarray, eps: float) -> np.ndarray:
    """d/dmu of the barrier gradient: dof-wise -1/(rho+eps) + 1/(1+eps-rho)."""
    lo = rho + eps
    hi = 1.0 + eps - rho
    if np.any(lo <= 0.0) or np.any(hi <= 0.0):
        raise BarrierDomainError("density dof outside the enlarged feasible interval")
    return -1.0 / lo + 1.0 / hi


# ---------------------------------------------------------------------------
# state layout


@dataclass(frozen=True)
class StateLayout:
    """Deterministic block layout of the full unknown vector."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    def offset(self, name: str) -> int:
        i = self.names.index(name)
        return int(sum(self.sizes[:i]))

    def block(self, name: str) -> slice:
        off = self.offset(name)
        return slice(off, off + self.sizes[self.names.index(name)])

    def describe(self) -> dict[str, dict[str, int]]:
        return {
            n: {"offset": self.offset(n), "size": int(s)}
            for n, s in zip(self.names, self.sizes)
        }


def build_state_layout(problem_kind: str, mesh: Mesh) -> StateLayout:
    """Dof ordering: velocity/displacement block, density block, pressure block, scalars."""
    nv = mesh.num_vertices
    edges, _ = build_edge_index(mesh)
    ne = edges.shape[0]
    nu_th = 2 * (nv + ne)
    if problem_kind == "bp":
        return StateLayout(("u", "rho", "p", "p0", "lam"), (nu_th, nv, nv, 1, 1))
    if problem_kind == "bp_neumann":
        return StateLayout(("u", "rho", "p", "lam"), (nu_th, nv, nv, 1))
    if problem_kind == "compliance":
        return StateLayout(("u", "rho", "lam"), (2 * nv, nv, 1))
    raise ValueError(f"unknown problem kind {problem_kind!r}")


# ---------------------------------------------------------------------------
# problem-facing dispatchers (the concrete forms live in problems.py)


def assemble_residual(problem, z: np.ndarray, mu: float) -> np.ndarray:
    return problem.residual(z, mu)


def assemble_jacobian(problem, z: np.ndarray, mu: float) -> sp.csr_matrix:
    return problem.jacobian(z, mu)


def evaluate_J(problem, z: np.ndarray) -> float:
    return problem.objective(z)
