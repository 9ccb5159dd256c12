"""Initial guesses for the next barrier subproblem: secant, tangent, and
feasible tangent prediction (the latter solves a linear complementarity
problem so the predicted density stays inside its true box)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import linalg
from .activeset import Bounds, MCPSystem, project_box, solve_mcp


class PredictorKind(str, Enum):
    none = "none"
    secant = "secant"
    tangent = "tangent"
    feasible_tangent = "feasible-tangent"


@dataclass
class Prediction:
    z: np.ndarray
    linear_solves: int
    fallback: str = ""


def secant_predict(z_k: np.ndarray, z_km1, mu_k: float, mu_km1, mu_kp1: float,
                   bounds: Bounds) -> Prediction:
    """Extrapolate along the last two states; density clamped to the true box."""
    if z_km1 is None or mu_km1 is None or mu_km1 == mu_k:
        return Prediction(np.array(z_k, copy=True), 0, fallback="no-history")
    t = (mu_kp1 - mu_k) / (mu_k - mu_km1)
    z_star = z_k + t * (z_k - z_km1)
    return Prediction(project_box(z_star, bounds), 0)


def tangent_predict(jacobian: sp.spmatrix, dF_dmu: np.ndarray, z_k: np.ndarray,
                    dmu: float, bounds: Bounds, order=None) -> Prediction:
    """Solve J dz = -F_mu' dmu at the current point; density clamped to the true box."""
    if dmu == 0.0:
        return Prediction(np.array(z_k, copy=True), 0)
    try:
        fact = linalg.factorize(jacobian, order=order)
    except linalg.SingularMatrixError:
        return Prediction(np.array(z_k, copy=True), 0, fallback="singular-jacobian")
    dz = fact.solve(-dF_dmu * dmu)
    return Prediction(project_box(z_k + dz, bounds), 1)


def feasible_tangent_predict(jacobian: sp.spmatrix, dF_dmu: np.ndarray, z_k: np.ndarray,
                             dmu: float, bounds: Bounds, max_iter: int = 20,
                             order=None) -> Prediction:
    """Tangent prediction posed as a complementarity problem on the step.

    The density step is boxed to [lower - rho, upper - rho] so the prediction is
    feasible by construction; where no bound is hit this reduces to the plain
    tangent system. The linearized system is solved with the BM strategy.
    """
    if dmu == 0.0:
        return Prediction(np.array(z_k, copy=True), 0)
    J = sp.csr_matrix(jacobian)
    rhs = dF_dmu * dmu

    try:
        fact = linalg.factorize(J, order=order)
    except linalg.SingularMatrixError:
        return Prediction(np.array(z_k, copy=True), 0, fallback="singular-jacobian")
    dz_raw = fact.solve(-rhs)

    lo = bounds.lower - z_k
    hi = bounds.upper - z_k
    if np.all(dz_raw >= lo) and np.all(dz_raw <= hi):
        return Prediction(project_box(z_k + dz_raw, bounds), 1)

    step_bounds = Bounds(lo, hi, eps=0.0)
    system = MCPSystem(
        residual=lambda dz: J @ dz + rhs,
        jacobian=lambda dz: J,
        bounds=step_bounds,
        elimination_order=order,
    )
    dz0 = np.clip(dz_raw, lo, hi)
    tol = 1e-8 * max(1.0, float(np.linalg.norm(rhs)))
    res = solve_mcp(system, dz0, solver="bm", tol=tol, max_iter=max_iter)
    if not res.converged:
        return Prediction(project_box(z_k + dz_raw, bounds), 1 + res.iterations,
                          fallback="lcp-nonconvergence")
    return Prediction(project_box(z_k + res.z, bounds), 1 + res.iterations)
