"""Semismooth primal-dual active-set solvers (HIK and BM) for box-constrained systems.

Both solvers drive F_mu(z) = 0 subject to componentwise bounds on a subset of
the unknowns (the density block). HIK classifies via the primal-dual margin
lambda - (z - bound) and never projects; BM classifies via the residual sign at
the bounds and projects every iterate onto the true box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .deflation import DeflationBreakdownError

ARMIJO_SLOPE = 1e-4
MAX_HALVINGS = 10
DEFLATION_DEDUPE_TOL = 1e-8


class BarrierDomainError(ValueError):
    """A density dof left the enlarged feasible interval where barrier terms are defined."""


class StepFailureError(RuntimeError):
    """A reduced linear solve failed; the caller treats the solve as nonconvergent."""


class InfeasibleIterateError(ValueError):
    """BM was handed an iterate violating the true box constraints."""


class InconsistentDualsError(ValueError):
    """A dof was classified lower-active and upper-active simultaneously."""


@dataclass(frozen=True)
class Bounds:
    """True box [lower, upper] plus the enlarged box widened by eps on bounded dofs."""

    lower: np.ndarray
    upper: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if np.any(lo >= hi):
            raise ValueError("bounds must satisfy lower < upper componentwise")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def bounded_below(self) -> np.ndarray:
        return np.isfinite(self.lower)

    @property
    def bounded_above(self) -> np.ndarray:
        return np.isfinite(self.upper)

    @property
    def enlarged_lower(self) -> np.ndarray:
        out = self.lower.copy()
        m = self.bounded_below
        out[m] -= self.eps
        return out

    @property
    def enlarged_upper(self) -> np.ndarray:
        out = self.upper.copy()
        m = self.bounded_above
        out[m] += self.eps
        return out

    def feasible(self, z: np.ndarray) -> bool:
        return bool(np.all(z >= self.lower) and np.all(z <= self.upper))


@dataclass(frozen=True)
class ActiveSetPartition:
    """Disjoint masks over all dofs; unbounded dofs are always inactive."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        both = self.lower & self.upper
        if both.any():
            raise InconsistentDualsError(
                f"{int(both.sum())} dofs classified active at both bounds"
            )

    @property
    def active(self) -> np.ndarray:
        return self.lower | self.upper

    @property
    def inactive(self) -> np.ndarray:
        return ~self.active

    def counts(self) -> tuple[int, int]:
        return int(self.lower.sum()), int(self.upper.sum())


@dataclass
class MCPSystem:
    """Residual/Jacobian callbacks and bounds defining F_mu(z)=0 with box constraints.

    elimination_order, when provided, is a fill-reducing permutation of all
    dofs (nested dissection); reduced solves inherit its induced subsequence.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sp.spmatrix]
    bounds: Bounds
    elimination_order: np.ndarray | None = None


@dataclass
class StepRecord:
    """One solver step, as emitted to the iteration log."""

    mu: float
    solver: str
    phase: str
    n_lower: int
    n_upper: int
    f_norm: float
    step_length: float


@dataclass
class StepResult:
    z: np.ndarray
    lam_a: np.ndarray
    lam_b: np.ndarray
    dz: np.ndarray            # realized step (after linesearch and projection)
    dz_raw: np.ndarray        # computed update before damping/projection
    step_length: float
    partition: ActiveSetPartition
    F: np.ndarray | None = None


@dataclass
class MCPResult:
    z: np.ndarray
    lam_a: np.ndarray
    lam_b: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    failure: str = ""


def _ncp_phi(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """phi(x,y) = x - (x-y)_+ ; zero iff x,y >= 0 and xy = 0."""
    return x - np.maximum(x - y, 0.0)


def ncp_residual(z, lam_a, lam_b, system: MCPSystem, F: Optional[np.ndarray] = None) -> float:
    """l2 norm of the semismooth KKT residual (stationarity + complementarity)."""
    if F is None:
        F = system.residual(z)
    b = system.bounds
    r = F - lam_a + lam_b
    blocks = [r]
    mlo = b.bounded_below
    if mlo.any():
        blocks.append(_ncp_phi(lam_a[mlo], z[mlo] - b.lower[mlo]))
    mhi = b.bounded_above
    if mhi.any():
        blocks.append(_ncp_phi(lam_b[mhi], b.upper[mhi] - z[mhi]))
    return float(np.sqrt(sum(float(v @ v) for v in blocks)))


def hik_classify(z, lam_a, lam_b, bounds: Bounds) -> ActiveSetPartition:
    """Active iff the primal-dual margin is strictly positive; ties go inactive."""
    lo = bounds.bounded_below & (lam_a - z + np.where(bounds.bounded_below, bounds.lower, 0.0) > 0.0)
    hi = bounds.bounded_above & (lam_b - np.where(bounds.bounded_above, bounds.upper, 0.0) + z > 0.0)
    return ActiveSetPartition(lower=lo, upper=hi)


def bm_classify(z, F, bounds: Bounds) -> ActiveSetPartition:
    """Active iff sitting exactly on a bound with the residual pushing outward."""
    if not bounds.feasible(z):
        raise InfeasibleIterateError("BM requires an iterate feasible w.r.t. the true box")
    lo = bounds.bounded_below & (z <= bounds.lower) & (F > 0.0)
    hi = bounds.bounded_above & (z >= bounds.upper) & (F < 0.0)
    return ActiveSetPartition(lower=lo, upper=hi)


def project_box(z, bounds: Bounds) -> np.ndarray:
    return np.clip(z, bounds.lower, bounds.upper)


def _induced_order(order: np.ndarray | None, idx: np.ndarray) -> np.ndarray | None:
    """Restriction of a global elimination order to a dof subset."""
    if order is None:
        return None
    rank = np.empty(order.shape[0], dtype=np.int64)
    rank[order] = np.arange(order.shape[0])
    return np.argsort(rank[idx], kind="stable")


def _reduced_solve(J: sp.spmatrix, inactive: np.ndarray, rhs_I: np.ndarray,
                   order: np.ndarray | None = None):
    idx = np.flatnonzero(inactive)
    if idx.size == 0:
        return np.zeros(0)
    Jc = sp.csr_matrix(J)
    J_II = Jc[idx][:, idx]
    try:
        fact = linalg.factorize(J_II, order=_induced_order(order, idx))
        return fact.solve(rhs_I)
    except linalg.SingularMatrixError as exc:
        raise StepFailureError(f"reduced system singular: {exc}") from exc


def _deflation_scale(deflation, z: np.ndarray, dz: np.ndarray, inactive: np.ndarray) -> float:
    """Sherman-Morrison factor for the inactive-block update of the deflated system."""
    if deflation is None or deflation.is_empty():
        return 1.0
    if deflation.min_distance(z) == 0.0:
        return 1.0  # zero Newton step at a deflated root; let the iteration stall honestly
    m = deflation.m_value(z)
    grad = deflation.m_gradient(z)
    inner = float(grad[inactive] @ dz[inactive]) / m
    denom = 1.0 - inner
    if abs(denom) < 1e-12:
        raise DeflationBreakdownError("Sherman-Morrison denominator vanished")
    return 1.0 + inner / denom


def _backtrack(system: MCPSystem, z, dz, partition: ActiveSetPartition, F,
               make_trial: Callable[[float], np.ndarray], deflation=None):
    """Armijo backtracking on the merit ||F|| over the inactive block (the
    deflated residual m(z)||F|| when a deflation operator is present);
    returns (z_new, F_new, t)."""
    I = partition.inactive

    def merit(z_at, F_at) -> float:
        base = float(np.linalg.norm(F_at[I]))
        if deflation is not None and not deflation.is_empty():
            if deflation.min_distance(z_at) == 0.0:
                return float("inf")
            return deflation.m_value(z_at) * base
        return base

    f0 = merit(z, F)
    best = None
    t = 1.0
    for _ in range(MAX_HALVINGS + 1):
        z_trial = make_trial(t)
        try:
            F_trial = system.residual(z_trial)
        except BarrierDomainError:
            t *= 0.5
            continue
        fn = merit(z_trial, F_trial)
        if fn <= (1.0 - ARMIJO_SLOPE * t) * f0:
            return z_trial, F_trial, t
        if best is None or fn < best[1]:
            best = (z_trial, fn, F_trial, t)
        t *= 0.5
    if best is None:
        raise StepFailureError("every linesearch trial left the barrier domain")
    z_best, _, F_best, t_best = best
    return z_best, F_best, t_best


def hik_step(system: MCPSystem, z, lam_a, lam_b, F=None, J=None, deflation=None) -> StepResult:
    """One primal-dual active-set step: unit update on the active block, reduced
    Newton solve plus backtracking on the inactive block, dual recovery from the
    full linearized rows."""
    b = system.bounds
    if F is None:
        F = system.residual(z)
    if J is None:
        J = system.jacobian(z)
    J = sp.csr_matrix(J)
    part = hik_classify(z, lam_a, lam_b, b)
    A = part.active
    I = part.inactive

    dz = np.zeros_like(z)
    dz[part.lower] = b.lower[part.lower] - z[part.lower]
    dz[part.upper] = b.upper[part.upper] - z[part.upper]

    rhs = -F[I]
    if A.any():
        idxA = np.flatnonzero(A)
        rhs = rhs - (J[np.flatnonzero(I)][:, idxA] @ dz[idxA])
    dz[I] = _reduced_solve(J, I, rhs, order=system.elimination_order)
    scale = _deflation_scale(deflation, z, dz, I)
    dz[I] *= scale

    def make_trial(t: float) -> np.ndarray:
        zt = z.copy()
        zt[A] += dz[A]          # unit step onto the bounds
        zt[I] += t * dz[I]
        return zt

    z_new, F_new, t = _backtrack(system, z, dz, part, F, make_trial, deflation=deflation)

    dz_actual = z_new - z
    lin = F + J @ dz_actual
    la = np.zeros_like(z)
    lb = np.zeros_like(z)
    la[part.lower] = np.maximum(lin[part.lower], 0.0)
    lb[part.upper] = np.maximum(-lin[part.upper], 0.0)
    return StepResult(z=z_new, lam_a=la, lam_b=lb, dz=dz_actual, dz_raw=dz.copy(),
                      step_length=t, partition=part, F=F_new)


def bm_step(system: MCPSystem, z, F=None, J=None, deflation=None) -> StepResult:
    """One reduced-space step: freeze the active block, solve the inactive block,
    project the damped iterate back onto the true box."""
    b = system.bounds
    if F is None:
        F = system.residual(z)
    part = bm_classify(z, F, b)
    if J is None:
        J = system.jacobian(z)
    J = sp.csr_matrix(J)
    I = part.inactive

    dz = np.zeros_like(z)
    dz[I] = _reduced_solve(J, I, -F[I], order=system.elimination_order)
    scale = _deflation_scale(deflation, z, dz, I)
    dz[I] *= scale

    def make_trial(t: float) -> np.ndarray:
        return project_box(z + t * dz, b)

    z_new, F_new, t = _backtrack(system, z, dz, part, F, make_trial, deflation=deflation)
    la, lb = _bm_duals(z_new, F_new, b)
    return StepResult(z=z_new, lam_a=la, lam_b=lb, dz=z_new - z, dz_raw=dz.copy(),
                      step_length=t, partition=part, F=F_new)


def _bm_duals(z, F, bounds: Bounds) -> tuple[np.ndarray, np.ndarray]:
    """Duals implied by the residual sign at the bounds (BM carries no dual state)."""
    at_lo = bounds.bounded_below & (z <= bounds.lower)
    at_hi = bounds.bounded_above & (z >= bounds.upper)
    la = np.where(at_lo, np.maximum(F, 0.0), 0.0)
    lb = np.where(at_hi, np.maximum(-F, 0.0), 0.0)
    return la, lb


def _hik_initial_duals(z, F, bounds: Bounds) -> tuple[np.ndarray, np.ndarray]:
    """Duals at a fresh subproblem, chosen so the first HIK classification agrees with BM's."""
    return _bm_duals(z, F, bounds)


def solve_mcp(
    system: MCPSystem,
    z0: np.ndarray,
    solver: str = "bm",
    tol: float = 1e-7,
    max_iter: int = 100,
    deflation=None,
    log: Optional[list] = None,
    mu: float = float("nan"),
    phase: str = "",
    monitor: Optional[Callable[[np.ndarray], None]] = None,
) -> MCPResult:
    """Drive F(z)=0 with box constraints to ncp_residual <= tol.

    Nonconvergence (max_iter exhausted, a singular reduced solve, or a deflation
    breakdown) is reported through MCPResult.converged, not raised: the deflation
    search treats failed solves as exhausted guesses.
    """
    if solver not in ("bm", "hik"):
        raise ValueError(f"unknown solver {solver!r}")
    z = np.array(z0, dtype=float, copy=True)
    b = system.bounds
    if solver == "bm" and not b.feasible(z):
        raise InfeasibleIterateError("BM initial guess violates the true box constraints")

    F = system.residual(z)
    if solver == "hik":
        lam_a, lam_b = _hik_initial_duals(z, F, b)
    else:
        lam_a, lam_b = _bm_duals(z, F, b)

    for it in range(max_iter + 1):
        res = ncp_residual(z, lam_a, lam_b, system, F=F)
        if res <= tol:
            distinct = (
                deflation is None
                or deflation.is_empty()
                or deflation.min_distance(z) > DEFLATION_DEDUPE_TOL
            )
            if distinct:
                return MCPResult(z, lam_a, lam_b, it, True, res)
        if it == max_iter:
            return MCPResult(z, lam_a, lam_b, it, False, res, failure="max_iter")
        try:
            if solver == "hik":
                step = hik_step(system, z, lam_a, lam_b, F=F, deflation=deflation)
            else:
                step = bm_step(system, z, F=F, deflation=deflation)
        except (StepFailureError, DeflationBreakdownError, InconsistentDualsError) as exc:
            return MCPResult(z, lam_a, lam_b, it, False, res, failure=str(exc))
        z, lam_a, lam_b = step.z, step.lam_a, step.lam_b
        if monitor is not None:
            monitor(z)
        F = step.F if step.F is not None else system.residual(z)
        if solver == "bm":
            lam_a, lam_b = _bm_duals(z, F, b)
        if log is not None:
            n_lo, n_hi = step.partition.counts()
            log.append(
                StepRecord(
                    mu=mu,
                    solver=solver,
                    phase=phase,
                    n_lower=n_lo,
                    n_upper=n_hi,
                    f_norm=float(np.linalg.norm(F)),
                    step_length=step.step_length,
                )
            )
    raise AssertionError("unreachable")
