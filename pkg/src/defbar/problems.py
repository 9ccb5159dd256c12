"""Concrete problem definitions: fluid power dissipation, structural compliance,
the six-bar-truss counterexample, and the 1D obstacle QP test harness."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import fem, linalg
from .activeset import Bounds, MCPSystem
from .mesh import Mesh, RectangleSpec, build_rect_mesh, interval_predicate, tag_boundary

DEFAULT_EPS_LOG = 1e-2


class ProblemSetupError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameter records


@dataclass(frozen=True)
class BPParams:
    """Fluid power-dissipation parameters."""

    alpha_bar: float = 2.5e4
    q: float = 0.1
    nu: float = 1.0
    gamma: float = 1.0 / 3.0
    f: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.alpha_bar > 0 and self.q > 0 and self.nu > 0 and 0 < self.gamma < 1):
            raise ProblemSetupError("BPParams out of range")


@dataclass(frozen=True)
class ComplianceParams:
    """SIMP compliance parameters with Ginzburg-Landau regularization."""

    eps_simp: float = 1e-5
    p_s: float = 3.0
    beta: float = 1.8e-4
    eps_gl: float = 4.4e-3
    mu_l: float = 75.38
    lam_l: float = 64.62
    gamma: float = 0.5
    traction: float = 1.0

    def __post_init__(self):
        if not (0 < self.eps_simp < 1 and self.p_s >= 1 and self.beta > 0 and self.eps_gl > 0):
            raise ProblemSetupError("ComplianceParams out of range")


@dataclass(frozen=True)
class TrussParams:
    beta_t: float = 2.6
    p_s: float = 3.0
    tau: float = 1e-4

    def __post_init__(self):
        if self.beta_t <= 0 or self.p_s < 1:
            raise ProblemSetupError("TrussParams out of range")


@dataclass(frozen=True)
class ObstacleParams:
    n: int
    f: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise ProblemSetupError("obstacle grid needs n >= 2")
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))


# ---------------------------------------------------------------------------
# inverse permeability


def alpha(rho, params: BPParams):
    """Brinkman drag: alpha_bar * q * (1 - rho) / (rho + q)."""
    return params.alpha_bar * (1.0 - rho * (params.q + 1.0) / (rho + params.q))


def alpha_prime(rho, params: BPParams):
    return -params.alpha_bar * (params.q + 1.0) * params.q / (rho + params.q) ** 2


def alpha_dprime(rho, params: BPParams):
    return 2.0 * params.alpha_bar * (params.q + 1.0) * params.q / (rho + params.q) ** 3


def simp_k(rho, p: ComplianceParams):
    return p.eps_simp + (1.0 - p.eps_simp) * rho**p.p_s


def simp_k_prime(rho, p: ComplianceParams):
    return (1.0 - p.eps_simp) * p.p_s * rho ** (p.p_s - 1.0)


def simp_k_dprime(rho, p: ComplianceParams):
    return (1.0 - p.eps_simp) * p.p_s * (p.p_s - 1.0) * rho ** (p.p_s - 2.0)


# ---------------------------------------------------------------------------
# fluid problems


def _parabola(center: float, halfwidth: float = 1.0 / 12.0) -> Callable[[float, float], float]:
    scale = 1.0 / halfwidth**2

    def profile(x: float, y: float) -> float:
        v = 1.0 - scale * (y - center) ** 2
        return v if v > 0.0 else 0.0

    return profile


DOUBLE_PIPE_TAGS = {"inlet_top": 1, "inlet_bottom": 2, "outlet_top": 3, "outlet_bottom": 4}


def double_pipe_mesh(nx: int = 75, ny: int = 50, diagonal: str = "right") -> Mesh:
    """Domain (0,1.5)x(0,1) with the four flow strips of height 1/6 tagged."""
    mesh = build_rect_mesh(RectangleSpec(1.5, 1.0, nx, ny, diagonal))
    segs = [
        (interval_predicate("x", 0.0, 2.0 / 3.0, 5.0 / 6.0), DOUBLE_PIPE_TAGS["inlet_top"]),
        (interval_predicate("x", 0.0, 1.0 / 6.0, 1.0 / 3.0), DOUBLE_PIPE_TAGS["inlet_bottom"]),
        (interval_predicate("x", 1.5, 2.0 / 3.0, 5.0 / 6.0), DOUBLE_PIPE_TAGS["outlet_top"]),
        (interval_predicate("x", 1.5, 1.0 / 6.0, 1.0 / 3.0), DOUBLE_PIPE_TAGS["outlet_bottom"]),
    ]
    return tag_boundary(mesh, segs)


class FluidTopologyProblem:
    """Stationarity system of the enlarged barrier functional for pipe design.

    State layout: u (Taylor-Hood velocity), rho (P1), p (P1), then the scalar
    multipliers (pressure mean p0 for the Dirichlet variant, volume lambda).
    """

    def __init__(self, mesh: Mesh, params: BPParams, neumann: bool = False,
                 eps_log: float = DEFAULT_EPS_LOG, barrier_weighting: str = "lumped"):
        required = {1, 2} if neumann else {1, 2, 3, 4}
        present = set(int(t) for t in np.unique(mesh.boundary_tags))
        if not required <= present:
            raise ProblemSetupError(f"mesh is missing boundary tags {sorted(required - present)}")
        self.mesh = mesh
        self.params = params
        self.neumann = neumann
        self.eps_log = eps_log
        self.name = "double-pipe-neumann" if neumann else "double-pipe"

        geo = fem.Geometry(mesh)
        edges, cell_edges = fem.build_edge_index(mesh)
        self.V = fem.FunctionSpace("P2_vector2", mesh, geo, edges, cell_edges)
        self.S = fem.FunctionSpace("P1_scalar", mesh, geo)
        kind = "bp_neumann" if neumann else "bp"
        self.layout = fem.build_state_layout(kind, mesh)
        self.rho_slice = self.layout.block("rho")

        self.area = float(np.sum(geo.detJ)) * 0.5
        if neumann:
            self.K_u = fem.vector_elasticity(self.V, mu_coef=params.nu, lam_coef=0.0)
        else:
            self.K_u = params.nu * fem.vector_laplace(self.V)
        self.B = fem.divergence_coupling(self.V, self.S)
        self.w_s = fem.basis_integrals(self.S)
        self.M_rho = fem.scalar_mass(self.S)
        if barrier_weighting not in ("dofwise", "lumped"):
            raise ProblemSetupError(f"unknown barrier weighting {barrier_weighting!r}")
        self.barrier_weighting = barrier_weighting
        self.barrier_w = self.w_s if barrier_weighting == "lumped" else np.ones_like(self.w_s)

        # one piecewise profile over the whole boundary avoids conflicting values
        # where strip edges and wall edges share a vertex
        width = mesh.width
        top, bottom = _parabola(0.75), _parabola(0.25)

        def u_x(x: float, y: float) -> float:
            if abs(x) <= 1e-12:
                return top(x, y) + bottom(x, y)
            if not neumann and abs(x - width) <= 1e-12:
                return top(x, y) + bottom(x, y)
            return 0.0

        zero = lambda x, y: 0.0
        dirichlet_tags = [0, 1, 2] if neumann else [0, 1, 2, 3, 4]
        bcs = []
        for tag in dirichlet_tags:
            bcs.append(fem.DirichletBC(tag, 0, u_x))
            bcs.append(fem.DirichletBC(tag, 1, zero))
        self.bc_rows, self.bc_values = fem.dirichlet_rows(self.V, mesh, bcs, offset=0)
        self._elim_order: np.ndarray | None = None

    # -- block access -------------------------------------------------------

    def split(self, z: np.ndarray):
        L = self.layout
        u = z[L.block("u")]
        rho = z[L.block("rho")]
        p = z[L.block("p")]
        lam = float(z[L.block("lam")][0])
        p0 = 0.0 if self.neumann else float(z[L.block("p0")][0])
        return u, rho, p, p0, lam

    @property
    def gamma(self) -> float:
        return self.params.gamma

    def bounds(self) -> Bounds:
        n = self.layout.total
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        lo[self.rho_slice] = 0.0
        hi[self.rho_slice] = 1.0
        return Bounds(lo, hi, eps=self.eps_log)

    def rho_gram(self) -> sp.csr_matrix:
        return self.M_rho

    def dof_coords(self) -> np.ndarray:
        """Representative coordinates per dof (scalar multipliers off-domain)."""
        L = self.layout
        out = np.zeros((L.total, 2))
        pc = self.V.scalar_dof_coords
        out[0:L.block("u").stop:2] = pc
        out[1:L.block("u").stop:2] = pc
        out[L.block("rho")] = self.mesh.vertices
        out[L.block("p")] = self.mesh.vertices
        out[L.block("p").stop:] = [2.0 * self.mesh.width, 2.0 * self.mesh.height]
        return out

    def elimination_order(self) -> np.ndarray:
        """Nested-dissection dof order, computed once from the Jacobian sparsity.

        The structure state has nonzero velocity so the velocity-density
        coupling block is present in the pattern."""
        if self._elim_order is None:
            z = np.zeros(self.layout.total)
            z[self.rho_slice] = self.params.gamma
            z[self.layout.block("u")] = 1.0
            J = sp.csr_matrix(self.jacobian(z, 1.0))
            adj = sp.csr_matrix(
                (np.ones_like(J.data), J.indices, J.indptr), shape=J.shape
            )
            adj = ((adj + adj.T) > 0).tocsr()
            order = linalg.nested_dissection_order(self.dof_coords(), adj)
            # the dense scalar-multiplier rows must be eliminated last
            first_scalar = self.layout.block("p").stop
            scal = order >= first_scalar
            self._elim_order = np.concatenate([order[~scal], order[scal]])
        return self._elim_order

    # -- forms ----------------------------------------------------------------

    def residual(self, z: np.ndarray, mu: float) -> np.ndarray:
        pr = self.params
        u, rho, p, p0, lam = self.split(z)
        rho_q = self.S.values_at_qp(rho)
        alpha_q = alpha(rho_q, pr)
        u_q = self.V.vector_values_at_qp(u)

        r_u = fem.weighted_vector_mass_apply(self.V, alpha_q, u) + self.K_u @ u - self.B.T @ p
        if pr.f != (0.0, 0.0):
            ones = np.ones_like(rho_q)
            r_u = r_u - fem.weighted_vector_mass_apply(self.V, ones, _vector_field_coeffs(self.V, pr.f))
        speed2 = np.sum(u_q**2, axis=-1)
        r_rho = fem.scalar_load(self.S, 0.5 * alpha_prime(rho_q, pr) * speed2)
        r_rho = r_rho + lam * self.w_s + self.barrier_w * fem.barrier_gradient(rho, mu, self.eps_log)
        r_p = -(self.B @ u)
        if not self.neumann:
            r_p = r_p - p0 * self.w_s
        r_lam = np.array([self.w_s @ rho - pr.gamma * self.area])

        parts = [r_u, r_rho, r_p]
        if not self.neumann:
            parts.append(np.array([-(self.w_s @ p)]))
        parts.append(r_lam)
        res = np.concatenate(parts)
        return fem.apply_dirichlet_residual(res, self.bc_rows, self.bc_values, z)

    def jacobian(self, z: np.ndarray, mu: float) -> sp.csr_matrix:
        pr = self.params
        u, rho, p, p0, lam = self.split(z)
        rho_q = self.S.values_at_qp(rho)
        u_q = self.V.vector_values_at_qp(u)
        speed2 = np.sum(u_q**2, axis=-1)

        J_uu = fem.vector_mass(self.V, weight=alpha(rho_q, pr)) + self.K_u
        C = fem.mixed_vector_scalar(self.V, self.S, alpha_prime(rho_q, pr), u_q)
        J_rr = fem.scalar_mass(self.S, weight=0.5 * alpha_dprime(rho_q, pr) * speed2)
        J_rr = J_rr + sp.diags(self.barrier_w * fem.barrier_curvature(rho, mu, self.eps_log))
        w_col = sp.csr_matrix(self.w_s[:, None])

        if self.neumann:
            blocks = [
                [J_uu, C, -self.B.T, None],
                [C.T, J_rr, None, w_col],
                [-self.B, None, None, None],
                [None, w_col.T, None, None],
            ]
        else:
            blocks = [
                [J_uu, C, -self.B.T, None, None],
                [C.T, J_rr, None, None, w_col],
                [-self.B, None, None, -w_col, None],
                [None, None, -w_col.T, None, None],
                [None, w_col.T, None, None, None],
            ]
        J = sp.bmat(blocks, format="csr")
        return fem.apply_dirichlet_jacobian(J, self.bc_rows)

    def mu_gradient(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(self.layout.total)
        out[self.rho_slice] = self.barrier_w * fem.barrier_mu_derivative(z[self.rho_slice], self.eps_log)
        return out

    def objective(self, z: np.ndarray) -> float:
        pr = self.params
        u, rho, _, _, _ = self.split(z)
        rho_q = self.S.values_at_qp(rho)
        u_q = self.V.vector_values_at_qp(u)
        g_q = self.V.vector_grads_at_qp(u)
        drag = alpha(rho_q, pr) * np.sum(u_q**2, axis=-1)
        if self.neumann:
            eps_q = 0.5 * (g_q + np.swapaxes(g_q, 2, 3))
            visc = 2.0 * pr.nu * np.sum(eps_q**2, axis=(-2, -1))
        else:
            visc = pr.nu * np.sum(g_q**2, axis=(-2, -1))
        dissipation = 0.5 * fem.integrate(self.S, drag + visc)
        if pr.f != (0.0, 0.0):
            fdotu = u_q[..., 0] * pr.f[0] + u_q[..., 1] * pr.f[1]
            dissipation -= fem.integrate(self.S, fdotu)
        return dissipation

    def volume(self, z: np.ndarray) -> float:
        return float(self.w_s @ z[self.rho_slice])

    def initial_state(self) -> np.ndarray:
        """rho = gamma everywhere; solve the linear state rows for (u, p[, p0])."""
        z = np.zeros(self.layout.total)
        z[self.rho_slice] = self.params.gamma
        J = self.jacobian(z, 0.0)
        F = self.residual(z, 0.0)
        L = self.layout
        idx = [np.arange(L.block("u").start, L.block("u").stop),
               np.arange(L.block("p").start, L.block("p").stop)]
        if not self.neumann:
            idx.append(np.arange(L.block("p0").start, L.block("p0").stop))
        y = np.concatenate(idx)
        Jyy = sp.csr_matrix(J)[y][:, y]
        order = self.elimination_order()
        rank = np.empty(order.shape[0], dtype=np.int64)
        rank[order] = np.arange(order.shape[0])
        try:
            dy = linalg.factorize(Jyy, order=np.argsort(rank[y], kind="stable")).solve(-F[y])
        except linalg.SingularMatrixError as exc:
            raise ProblemSetupError(f"state initialization solve failed: {exc}") from exc
        z[y] += dy
        return z

    def output_fields(self, z: np.ndarray) -> dict:
        u, rho, p, _, _ = self.split(z)
        nv = self.mesh.num_vertices
        ux = u[0::2][:nv]
        uy = u[1::2][:nv]
        return {"rho": rho, "p": p, "u": np.column_stack([ux, uy])}


def _vector_field_coeffs(space: fem.FunctionSpace, f: tuple[float, float]) -> np.ndarray:
    out = np.zeros(space.num_dofs)
    out[0::2] = f[0]
    out[1::2] = f[1]
    return out


def bp_double_pipe(mesh: Mesh, params: BPParams | None = None,
                   eps_log: float = DEFAULT_EPS_LOG,
                   barrier_weighting: str = "lumped") -> FluidTopologyProblem:
    return FluidTopologyProblem(mesh, params or BPParams(), neumann=False, eps_log=eps_log,
                                barrier_weighting=barrier_weighting)


def bp_neumann_double_pipe(mesh: Mesh, params: BPParams | None = None,
                           eps_log: float = DEFAULT_EPS_LOG,
                           barrier_weighting: str = "lumped") -> FluidTopologyProblem:
    return FluidTopologyProblem(mesh, params or BPParams(), neumann=True, eps_log=eps_log,
                                barrier_weighting=barrier_weighting)


# ---------------------------------------------------------------------------
# compliance problems


class ComplianceProblem:
    """Reduced compliance stationarity system (adjoint eliminated, saddle in u)."""

    def __init__(self, mesh: Mesh, params: ComplianceParams,
                 dirichlet: list[fem.DirichletBC],
                 neumann_loads: list[tuple[int, Callable[[float, float], tuple[float, float]]]],
                 name: str = "compliance", eps_log: float = DEFAULT_EPS_LOG,
                 barrier_weighting: str = "lumped"):
        self.mesh = mesh
        self.params = params
        self.name = name
        self.eps_log = eps_log

        geo = fem.Geometry(mesh)
        self.V = fem.FunctionSpace("P1_vector2", mesh, geo)
        self.S = fem.FunctionSpace("P1_scalar", mesh, geo)
        self.layout = fem.build_state_layout("compliance", mesh)
        self.rho_slice = self.layout.block("rho")

        self.area = float(np.sum(geo.detJ)) * 0.5
        self.w_s = fem.basis_integrals(self.S)
        self.M_rho = fem.scalar_mass(self.S)
        self.K_rho = fem.scalar_stiffness(self.S)
        if barrier_weighting not in ("dofwise", "lumped"):
            raise ProblemSetupError(f"unknown barrier weighting {barrier_weighting!r}")
        self.barrier_weighting = barrier_weighting
        self.barrier_w = self.w_s if barrier_weighting == "lumped" else np.ones_like(self.w_s)
        self.t_N = np.zeros(self.V.num_dofs)
        for tag, trac in neumann_loads:
            self.t_N += fem.boundary_traction_load(self.V, mesh, tag, trac)
        if not np.any(self.t_N):
            raise ProblemSetupError("no traction edges found; check boundary tags")
        self.bc_rows, self.bc_values = fem.dirichlet_rows(self.V, mesh, dirichlet, offset=0)
        self._elim_order: np.ndarray | None = None

    def split(self, z: np.ndarray):
        L = self.layout
        return z[L.block("u")], z[L.block("rho")], float(z[L.block("lam")][0])

    @property
    def gamma(self) -> float:
        return self.params.gamma

    def bounds(self) -> Bounds:
        n = self.layout.total
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        lo[self.rho_slice] = 0.0
        hi[self.rho_slice] = 1.0
        return Bounds(lo, hi, eps=self.eps_log)

    def rho_gram(self) -> sp.csr_matrix:
        return self.M_rho

    def dof_coords(self) -> np.ndarray:
        L = self.layout
        out = np.zeros((L.total, 2))
        out[0:L.block("u").stop:2] = self.mesh.vertices
        out[1:L.block("u").stop:2] = self.mesh.vertices
        out[L.block("rho")] = self.mesh.vertices
        out[L.block("rho").stop:] = [2.0 * self.mesh.width, 2.0 * self.mesh.height]
        return out

    def elimination_order(self) -> np.ndarray:
        if self._elim_order is None:
            z = np.zeros(self.layout.total)
            z[self.rho_slice] = self.params.gamma
            z[self.layout.block("u")] = 1.0
            J = sp.csr_matrix(self.jacobian(z, 1.0))
            adj = sp.csr_matrix(
                (np.ones_like(J.data), J.indices, J.indptr), shape=J.shape
            )
            adj = ((adj + adj.T) > 0).tocsr()
            order = linalg.nested_dissection_order(self.dof_coords(), adj)
            first_scalar = self.layout.block("rho").stop
            scal = order >= first_scalar
            self._elim_order = np.concatenate([order[~scal], order[scal]])
        return self._elim_order

    def _energy_density(self, u: np.ndarray):
        """(2 mu_l |eps(u)|^2 + lam_l div(u)^2) at quadrature points."""
        g = self.V.vector_grads_at_qp(u)
        eps = 0.5 * (g + np.swapaxes(g, 2, 3))
        div = g[:, :, 0, 0] + g[:, :, 1, 1]
        return 2.0 * self.params.mu_l * np.sum(eps**2, axis=(-2, -1)) + self.params.lam_l * div**2

    def residual(self, z: np.ndarray, mu: float) -> np.ndarray:
        pr = self.params
        u, rho, lam = self.split(z)
        rho_q = self.S.values_at_qp(rho)
        k_q = simp_k(rho_q, pr)

        r_u = 2.0 * self.t_N - 2.0 * fem.weighted_elastic_apply(self.V, pr.mu_l, pr.lam_l, k_q, u)
        e_q = self._energy_density(u)
        r_rho = -fem.scalar_load(self.S, simp_k_prime(rho_q, pr) * e_q)
        r_rho += pr.beta * pr.eps_gl * (self.K_rho @ rho)
        r_rho += 0.5 * pr.beta / pr.eps_gl * (self.w_s - 2.0 * (self.M_rho @ rho))
        r_rho += lam * self.w_s + self.barrier_w * fem.barrier_gradient(rho, mu, self.eps_log)
        r_lam = np.array([self.w_s @ rho - pr.gamma * self.area])
        res = np.concatenate([r_u, r_rho, r_lam])
        return fem.apply_dirichlet_residual(res, self.bc_rows, self.bc_values, z)

    def jacobian(self, z: np.ndarray, mu: float) -> sp.csr_matrix:
        pr = self.params
        u, rho, lam = self.split(z)
        rho_q = self.S.values_at_qp(rho)
        k_q = simp_k(rho_q, pr)
        e_q = self._energy_density(u)

        J_uu = -2.0 * fem.vector_elasticity(self.V, pr.mu_l, pr.lam_l, weight=k_q)
        C = -2.0 * fem.mixed_gradform_scalar(self.V, self.S, pr.mu_l, pr.lam_l, u,
                                             simp_k_prime(rho_q, pr))
        J_rr = fem.scalar_mass(self.S, weight=-simp_k_dprime(rho_q, pr) * e_q)
        J_rr = J_rr + pr.beta * pr.eps_gl * self.K_rho - (pr.beta / pr.eps_gl) * self.M_rho
        J_rr = J_rr + sp.diags(self.barrier_w * fem.barrier_curvature(rho, mu, self.eps_log))
        w_col = sp.csr_matrix(self.w_s[:, None])
        J = sp.bmat(
            [[J_uu, C, None], [C.T, J_rr, w_col], [None, w_col.T, None]], format="csr"
        )
        return fem.apply_dirichlet_jacobian(J, self.bc_rows)

    def mu_gradient(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(self.layout.total)
        out[self.rho_slice] = self.barrier_w * fem.barrier_mu_derivative(z[self.rho_slice], self.eps_log)
        return out

    def objective(self, z: np.ndarray) -> float:
        """Compliance plus the Ginzburg-Landau regularization terms."""
        pr = self.params
        u, rho, _ = self.split(z)
        compliance = float(self.t_N @ u)
        rho_q = self.S.values_at_qp(rho)
        gl = 0.5 * pr.beta * pr.eps_gl * float(rho @ (self.K_rho @ rho))
        gl += 0.5 * pr.beta / pr.eps_gl * fem.integrate(self.S, rho_q * (1.0 - rho_q))
        return compliance + gl

    def volume(self, z: np.ndarray) -> float:
        return float(self.w_s @ z[self.rho_slice])

    def initial_state(self) -> np.ndarray:
        z = np.zeros(self.layout.total)
        z[self.rho_slice] = self.params.gamma
        J = self.jacobian(z, 0.0)
        F = self.residual(z, 0.0)
        L = self.layout
        y = np.arange(L.block("u").start, L.block("u").stop)
        Jyy = sp.csr_matrix(J)[y][:, y]
        try:
            dy = linalg.factorize(Jyy).solve(-F[y])
        except linalg.SingularMatrixError as exc:
            raise ProblemSetupError(f"state initialization solve failed: {exc}") from exc
        z[y] += dy
        return z

    def output_fields(self, z: np.ndarray) -> dict:
        u, rho, _ = self.split(z)
        return {"rho": rho, "u": np.column_stack([u[0::2], u[1::2]])}


def cantilever_mesh(nx: int = 60, ny: int = 40) -> Mesh:
    mesh = build_rect_mesh(RectangleSpec(1.5, 1.0, nx, ny, "right"))
    segs = [
        (interval_predicate("x", 0.0, 0.0, 1.0), 1),
        (interval_predicate("x", 1.5, 0.1, 0.2), 2),
        (interval_predicate("x", 1.5, 0.8, 0.9), 3),
    ]
    return tag_boundary(mesh, segs)


def compliance_cantilever(mesh: Mesh, params: ComplianceParams | None = None,
                          eps_log: float = DEFAULT_EPS_LOG) -> ComplianceProblem:
    """Cantilever clamped at x=0 with two downward tractions at x=1.5."""
    pr = params or ComplianceParams()
    dirichlet = [fem.DirichletBC(1, 0, lambda x, y: 0.0), fem.DirichletBC(1, 1, lambda x, y: 0.0)]
    loads = [(2, lambda x, y: (0.0, -pr.traction)), (3, lambda x, y: (0.0, -pr.traction))]
    return ComplianceProblem(mesh, pr, dirichlet, loads, name="cantilever", eps_log=eps_log)


def mbb_mesh(nx: int = 90, ny: int = 30) -> Mesh:
    mesh = build_rect_mesh(RectangleSpec(3.0, 1.0, nx, ny, "right"))
    segs = [
        (interval_predicate("x", 0.0, 0.0, 1.0), 1),
        (interval_predicate("y", 0.0, 2.9, 3.0), 2),
        (interval_predicate("y", 1.0, 0.0, 0.1), 3),
    ]
    return tag_boundary(mesh, segs)


def compliance_mbb(mesh: Mesh, params: ComplianceParams | None = None,
                   eps_log: float = DEFAULT_EPS_LOG) -> ComplianceProblem:
    """Half MBB beam: symmetry plane at x=0, vertical roller at the bottom right."""
    pr = params if params is not None else ComplianceParams(
        beta=9e-3, eps_gl=1.9e-2, gamma=0.535, traction=10.0
    )
    dirichlet = [fem.DirichletBC(1, 0, lambda x, y: 0.0), fem.DirichletBC(2, 1, lambda x, y: 0.0)]
    loads = [(3, lambda x, y: (0.0, -pr.traction))]
    return ComplianceProblem(mesh, pr, dirichlet, loads, name="mbb", eps_log=eps_log)


# ---------------------------------------------------------------------------
# six-bar-truss counterexample


class TrussProblem:
    """Two-variable reduction of the six-bar-truss compliance problem.

    The max of the two rational load cases is smoothed by a softmax with
    temperature tau; the mass constraint x1 + x2 = 1 carries a scalar
    multiplier, and the box constraints are left to the active-set solver.
    """

    name = "truss"

    def __init__(self, params: TrussParams | None = None, eps_log: float = DEFAULT_EPS_LOG):
        self.params = params or TrussParams()
        self.eps_log = eps_log
        self.layout = fem.StateLayout(("rho", "lam"), (2, 1))
        self.rho_slice = self.layout.block("rho")
        self.mesh = None
        self.gamma = 0.5

    def bounds(self) -> Bounds:
        return Bounds(np.array([0.0, 0.0, -np.inf]), np.array([1.0, 1.0, np.inf]),
                      eps=self.eps_log)

    def rho_gram(self) -> sp.csr_matrix:
        return sp.identity(2, format="csr")

    def elimination_order(self):
        return None

    def _branches(self, x: np.ndarray):
        b, p = self.params.beta_t, self.params.p_s
        x1, x2 = x
        d1 = x1**p + 5.0 * x2**p
        d2 = 5.0 * x1**p + x2**p
        g1 = b * (8.0 / d1 + 2.0 / d2)
        g2 = 8.0 / d1 + 18.0 / d2
        gd1 = np.array([p * x1 ** (p - 1.0), 5.0 * p * x2 ** (p - 1.0)])
        gd2 = np.array([5.0 * p * x1 ** (p - 1.0), p * x2 ** (p - 1.0)])
        hd1 = np.diag([p * (p - 1.0) * x1 ** (p - 2.0), 5.0 * p * (p - 1.0) * x2 ** (p - 2.0)])
        hd2 = np.diag([5.0 * p * (p - 1.0) * x1 ** (p - 2.0), p * (p - 1.0) * x2 ** (p - 2.0)])

        def rational(c1, c2):
            val = c1 / d1 + c2 / d2
            grad = -c1 * gd1 / d1**2 - c2 * gd2 / d2**2
            hess = c1 * (2.0 * np.outer(gd1, gd1) / d1**3 - hd1 / d1**2)
            hess += c2 * (2.0 * np.outer(gd2, gd2) / d2**3 - hd2 / d2**2)
            return val, grad, hess

        r1 = rational(8.0 * b, 2.0 * b)
        r2 = rational(8.0, 18.0)
        return r1, r2

    def smooth_max(self, x: np.ndarray):
        """Softmax-smoothed max of the two load cases: (value, gradient, hessian)."""
        tau = self.params.tau
        (g1, d1, h1), (g2, d2, h2) = self._branches(np.asarray(x, dtype=float))
        m = max(g1, g2)
        e1 = np.exp((g1 - m) / tau)
        e2 = np.exp((g2 - m) / tau)
        Z = e1 + e2
        w1, w2 = e1 / Z, e2 / Z
        val = m + tau * np.log(Z)
        grad = w1 * d1 + w2 * d2
        hess = w1 * h1 + w2 * h2
        hess += (np.outer(d1, d1) * w1 + np.outer(d2, d2) * w2 - np.outer(grad, grad)) / tau
        return val, grad, hess

    def residual(self, z: np.ndarray, mu: float) -> np.ndarray:
        x = z[:2]
        lam = z[2]
        _, grad, _ = self.smooth_max(x)
        r = grad + lam + fem.barrier_gradient(x, mu, self.eps_log)
        return np.concatenate([r, [x[0] + x[1] - 1.0]])

    def jacobian(self, z: np.ndarray, mu: float) -> sp.csr_matrix:
        x = z[:2]
        _, _, hess = self.smooth_max(x)
        H = hess + np.diag(fem.barrier_curvature(x, mu, self.eps_log))
        J = np.zeros((3, 3))
        J[:2, :2] = H
        J[:2, 2] = 1.0
        J[2, :2] = 1.0
        return sp.csr_matrix(J)

    def mu_gradient(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(3)
        out[:2] = fem.barrier_mu_derivative(z[:2], self.eps_log)
        return out

    def objective(self, z: np.ndarray) -> float:
        val, _, _ = self.smooth_max(z[:2])
        return float(val)

    def volume(self, z: np.ndarray) -> float:
        return float(z[0] + z[1])

    def initial_state(self) -> np.ndarray:
        return np.array([0.5, 0.5, 0.0])

    def output_fields(self, z: np.ndarray) -> dict:
        return {}


def truss_toy(params: TrussParams | None = None, eps_log: float = DEFAULT_EPS_LOG) -> TrussProblem:
    return TrussProblem(params, eps_log=eps_log)


# ---------------------------------------------------------------------------
# obstacle QP (Appendix-style solver harness)


def obstacle_matrix(n: int) -> sp.csr_matrix:
    """1D Dirichlet Laplacian on n interior points of (0,1), scaled by 1/h^2."""
    h = 1.0 / (n + 1)
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def obstacle_qp(params: ObstacleParams) -> MCPSystem:
    """Linear complementarity system A y - lambda = f, y >= phi, packaged for HIK and BM."""
    A = obstacle_matrix(params.n)
    f = params.f
    lo = params.phi.astype(float)
    hi = np.full(params.n, np.inf)

    def residual(z: np.ndarray) -> np.ndarray:
        return A @ z - f

    def jacobian(z: np.ndarray) -> sp.csr_matrix:
        return A

    return MCPSystem(residual=residual, jacobian=jacobian, bounds=Bounds(lo, hi, eps=0.0))


# ---------------------------------------------------------------------------
# half-step equivalence harness for the obstacle QP


@dataclass
class EquivalenceReport:
    """Lockstep HIK/BM comparison on one obstacle QP instance."""

    aligned_iterations: int
    max_update_discrepancy: float  # inactive-block updates, where partitions coincide
    max_halfstep_discrepancy: float  # BM next iterate vs HIK three-half-step iterate
    hik_converged: bool
    bm_converged: bool
    solution_gap: float


def obstacle_equivalence_report(params: ObstacleParams, max_iter: int = 80,
                                align_tol: float = 1e-12) -> EquivalenceReport:
    """Run HIK and BM side by side from the feasible start y = u = phi.

    Wherever the two partitions coincide and the inactive iterates agree, the
    raw inactive updates and the three-half-step iterates are compared; the
    maxima over the run are reported.
    """
    from . import activeset as acs

    system = obstacle_qp(params)
    b = system.bounds
    y = params.phi.copy()
    u = params.phi.copy()
    F_y = system.residual(y)
    la = np.maximum(F_y, 0.0)
    lb = np.zeros_like(la)
    # floating-point floor of A@y - f scales with ||A|| ~ 1/h^2 and the load
    conv_tol = 1e-8 * (1.0 + float(np.linalg.norm(params.f)))

    aligned = 0
    max_e2 = 0.0
    max_e3 = 0.0
    hik_done = bm_done = False
    for _ in range(max_iter):
        F_y = system.residual(y)
        F_u = system.residual(u)
        hik_done = acs.ncp_residual(y, la, lb, system, F=F_y) <= conv_tol
        la_u, lb_u = acs._bm_duals(u, F_u, b)
        bm_done = acs.ncp_residual(u, la_u, lb_u, system, F=F_u) <= conv_tol
        if hik_done and bm_done:
            break
        part_h = acs.hik_classify(y, la, lb, b)
        part_b = acs.bm_classify(u, F_u, b)
        I = part_h.inactive
        same_sets = bool(
            np.array_equal(part_h.lower, part_b.lower)
            and np.array_equal(part_h.upper, part_b.upper)
        )
        same_inactive = same_sets and (
            not I.any() or float(np.max(np.abs(y[I] - u[I]))) <= align_tol
        )
        step_h = acs.hik_step(system, y, la, lb, F=F_y)
        step_b = acs.bm_step(system, u, F=F_u)
        if same_inactive:
            aligned += 1
            if I.any():
                max_e2 = max(max_e2, float(np.max(np.abs(step_h.dz_raw[I] - step_b.dz_raw[I]))))
            part_next = acs.hik_classify(step_h.z, step_h.lam_a, step_h.lam_b, b)
            y_three_half = step_h.z.copy()
            y_three_half[part_next.lower] = b.lower[part_next.lower]
            y_three_half[part_next.upper] = b.upper[part_next.upper]
            max_e3 = max(max_e3, float(np.max(np.abs(y_three_half - step_b.z))))
        y, la, lb = step_h.z, step_h.lam_a, step_h.lam_b
        u = step_b.z
    gap = float(np.max(np.abs(y - u)))
    return EquivalenceReport(aligned, max_e2, max_e3, hik_done, bm_done, gap)


def obstacle_bruteforce_solution(params: ObstacleParams) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate all active sets of the obstacle QP and return the KKT-consistent one.

    Exponential in n; intended as an oracle for n <= 10.
    """
    n = params.n
    if n > 16:
        raise ValueError("brute-force enumeration is limited to small n")
    A = obstacle_matrix(n).toarray()
    f = params.f
    phi = params.phi
    best = None
    for mask in range(2**n):
        active = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        y = np.empty(n)
        y[active] = phi[active]
        I = ~active
        if I.any():
            rhs = f[I] - A[np.ix_(I, active)] @ phi[active]
            try:
                y[I] = np.linalg.solve(A[np.ix_(I, I)], rhs)
            except np.linalg.LinAlgError:
                continue
        lam = A @ y - f
        lam[I] = 0.0
        feasible = np.all(y >= phi - 1e-10) and np.all(lam[active] >= -1e-10)
        if feasible:
            best = (y, lam)
            break
    if best is None:
        raise RuntimeError("no KKT-consistent active set found")
    return best


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    kind: str  # "barrier" or "mcp"
    build: Callable  # (nx, ny, eps_log) -> problem, or () -> MCPSystem
    default_nx: int = 0
    default_ny: int = 0
    default_mu0: float = 100.0
    default_beta_max: int = 2
    default_predictor: str = "feasible-tangent"
    default_solver: str = "bm"


def _build_double_pipe(nx, ny, eps_log):
    return bp_double_pipe(double_pipe_mesh(nx, ny, "right"), eps_log=eps_log)


def _build_neumann(nx, ny, eps_log):
    return bp_neumann_double_pipe(double_pipe_mesh(nx, ny, "crossed"), eps_log=eps_log)


def _build_cantilever(nx, ny, eps_log):
    return compliance_cantilever(cantilever_mesh(nx, ny), eps_log=eps_log)


def _build_mbb(nx, ny, eps_log):
    return compliance_mbb(mbb_mesh(nx, ny), eps_log=eps_log)


def _build_truss(nx, ny, eps_log):
    return truss_toy(eps_log=eps_log)


REGISTRY: dict[str, RegistryEntry] = {
    "double-pipe": RegistryEntry(
        "double-pipe", "barrier", _build_double_pipe, 75, 50, 100.0, 2, "feasible-tangent"
    ),
    "double-pipe-neumann": RegistryEntry(
        "double-pipe-neumann", "barrier", _build_neumann, 45, 30, 1000.0, 4, "feasible-tangent"
    ),
    "cantilever": RegistryEntry(
        "cantilever", "barrier", _build_cantilever, 60, 40, 10.0, 2, "secant"
    ),
    "mbb": RegistryEntry("mbb", "barrier", _build_mbb, 90, 30, 50.0, 2, "secant"),
    "truss": RegistryEntry("truss", "barrier", _build_truss, 0, 0, 1.0, 4, "feasible-tangent"),
    "obstacle": RegistryEntry("obstacle", "mcp", lambda nx, ny, eps_log: None, 0, 64),
}
