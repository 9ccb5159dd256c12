"""The deflated barrier driver: continuation of barrier subproblems over a
decreasing schedule, with deflation used at every level to search for new
solution branches from the previous level's states."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activeset import MCPSystem, StepRecord, solve_mcp
from .deflation import DeflationOperator
from .predictor import (
    Prediction,
    PredictorKind,
    feasible_tangent_predict,
    secant_predict,
    tangent_predict,
)
from .problems import DEFAULT_EPS_LOG


@dataclass
class BarrierConfig:
    mu0: float = 100.0
    k_mu: float = 0.7
    r: float = 1.25
    mu_cut: float = 1e-10
    tol: float = 1e-7
    final_tol: float = 1e-9
    beta_max: int = 2
    eps_log: float = DEFAULT_EPS_LOG
    solver: str = "bm"
    predictor: str = "feasible-tangent"
    max_iter_continuation: int = 100
    max_iter_deflation: int = 40
    # adaptive step control: when a branch's corrector fails, the whole level is
    # retried at the geometric midpoint, up to this many times per level and
    # a run-wide budget (a genuine fold would otherwise shrink steps forever)
    max_step_refinements: int = 3
    refinement_budget: int = 12

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if not 0 < self.k_mu < 1:
            raise ValueError("k_mu must lie in (0,1)")
        if self.r <= 1:
            raise ValueError("superlinear exponent r must exceed 1")
        if self.tol <= 0 or self.beta_max < 1 or self.eps_log < 0:
            raise ValueError("invalid tolerance, branch count, or enlargement")
        if self.solver not in ("bm", "hik"):
            raise ValueError(f"unknown solver {self.solver!r}")
        PredictorKind(self.predictor)


@dataclass
class BranchRecord:
    branch_id: int
    z: np.ndarray
    J: float
    discovery_mu: float
    continuation_iters: int
    deflation_iters: int
    prediction_solves: int
    per_mu: list[tuple[float, int, int, int]] = field(default_factory=list)
    # rows (mu, continuation, deflation, prediction)


@dataclass
class RunResult:
    branches: list[BranchRecord]
    mu_history: list[float]
    branch_death: bool
    failed_deflation_iterations: int
    step_log: list[StepRecord] = field(default_factory=list)


def _progress(msg: str) -> None:
    if os.environ.get("DEFBAR_LOG", ""):
        print(f"[defbar] {msg}", file=sys.stderr, flush=True)


def theta_update(mu: float, config: BarrierConfig) -> float:
    """Next barrier parameter: geometric above 1, superlinear below, 0 past the cutoff."""
    if mu <= config.mu_cut:
        return 0.0
    if mu >= 1.0:
        return config.k_mu * mu
    return min(config.k_mu * mu, mu**config.r)


def mu_schedule(config: BarrierConfig) -> list[float]:
    """The full strictly decreasing schedule from mu0 down to (and including) 0."""
    out = [config.mu0]
    while out[-1] > 0.0:
        out.append(theta_update(out[-1], config))
    return out


def initialize(problem, config: Optional[BarrierConfig] = None) -> np.ndarray:
    """Uniform density at the volume fraction; state block from a linear solve."""
    return problem.initial_state()


@dataclass
class _Branch:
    branch_id: int
    z: np.ndarray
    mu: float
    discovery_mu: float
    z_prev: Optional[np.ndarray] = None
    mu_prev: Optional[float] = None
    record: Optional[BranchRecord] = None
    pending: Optional[tuple] = None


def _predict(problem, branch: _Branch, mu_next: float, config: BarrierConfig) -> Prediction:
    kind = PredictorKind(config.predictor)
    bounds = problem.bounds()
    if kind is PredictorKind.none:
        return Prediction(np.array(branch.z, copy=True), 0)
    if kind is PredictorKind.secant:
        return secant_predict(branch.z, branch.z_prev, branch.mu, branch.mu_prev,
                              mu_next, bounds)
    J = problem.jacobian(branch.z, branch.mu)
    dF = problem.mu_gradient(branch.z)
    dmu = mu_next - branch.mu
    order = problem.elimination_order() if hasattr(problem, "elimination_order") else None
    if kind is PredictorKind.tangent:
        return tangent_predict(J, dF, branch.z, dmu, bounds, order=order)
    return feasible_tangent_predict(J, dF, branch.z, dmu, bounds, order=order)


def run_deflated_barrier(problem, config: BarrierConfig,
                         iterate_monitor=None, predictor_monitor=None) -> RunResult:
    """Prediction / continuation / deflation over the barrier schedule.

    Returns one BranchRecord per branch that survived to mu = 0. If every
    branch is lost mid-continuation the partial result carries branch_death.
    """
    problem.eps_log = config.eps_log
    bounds = problem.bounds()
    step_log: list[StepRecord] = []
    failed_deflation = 0

    elim_order = problem.elimination_order() if hasattr(problem, "elimination_order") else None

    def system_at(mu: float) -> MCPSystem:
        return MCPSystem(
            residual=lambda z: problem.residual(z, mu),
            jacobian=lambda z: problem.jacobian(z, mu),
            bounds=bounds,
            elimination_order=elim_order,
        )

    def subproblem_tol(mu: float) -> float:
        return min(config.tol, config.final_tol) if mu == 0.0 else config.tol

    z_init = initialize(problem, config)
    mu = config.mu0
    mu_history = [mu]
    branches: list[_Branch] = []
    dead: list[int] = []
    next_id = 0

    deflation = DeflationOperator(gram=problem.rho_gram(), rho_slice=problem.rho_slice)
    sys_mu = system_at(mu)
    res = solve_mcp(sys_mu, z_init, solver=config.solver, tol=subproblem_tol(mu),
                    max_iter=config.max_iter_continuation, deflation=deflation,
                    log=step_log, mu=mu, phase="continuation", monitor=iterate_monitor)
    if not res.converged:
        return RunResult([], mu_history, True, 0, step_log)
    first = _Branch(next_id, res.z, mu, mu)
    first.record = BranchRecord(next_id, res.z, float("nan"), mu, res.iterations, 0, 0,
                                per_mu=[(mu, res.iterations, 0, 0)])
    branches.append(first)
    deflation.add(res.z)
    next_id += 1
    _progress(f"mu={mu:.6g} initial branch found in {res.iterations} iterations")

    # mu0-level deflation search from the same initial guess
    while len(branches) < config.beta_max:
        res = solve_mcp(sys_mu, z_init, solver=config.solver, tol=subproblem_tol(mu),
                        max_iter=config.max_iter_deflation, deflation=deflation,
                        log=step_log, mu=mu, phase="deflation", monitor=iterate_monitor)
        if not res.converged:
            failed_deflation += res.iterations
            break
        br = _Branch(next_id, res.z, mu, mu)
        br.record = BranchRecord(next_id, res.z, float("nan"), mu, 0, res.iterations, 0,
                                 per_mu=[(mu, 0, res.iterations, 0)])
        branches.append(br)
        deflation.add(res.z)
        next_id += 1

    refinements_left = config.refinement_budget
    while mu > 0.0 and branches:
        prev_states = [(b.branch_id, np.array(b.z, copy=True)) for b in branches]
        mu_next = theta_update(mu, config)

        # try the level; on any corrector failure shrink the step toward mu and retry
        for refinement in range(config.max_step_refinements + 1):
            sys_next = system_at(mu_next)
            tol_next = subproblem_tol(mu_next)
            deflation = DeflationOperator(gram=problem.rho_gram(), rho_slice=problem.rho_slice)
            survivors: list[_Branch] = []
            level_ok = True
            for br in branches:
                pred = _predict(problem, br, mu_next, config)
                if predictor_monitor is not None:
                    predictor_monitor(pred.z)
                res = solve_mcp(sys_next, pred.z, solver=config.solver, tol=tol_next,
                                max_iter=config.max_iter_continuation, deflation=deflation,
                                log=step_log, mu=mu_next, phase="continuation",
                                monitor=iterate_monitor)
                br.record.continuation_iters += res.iterations
                br.record.prediction_solves += pred.linear_solves
                br.record.per_mu.append((mu_next, res.iterations, 0, pred.linear_solves))
                if not res.converged:
                    level_ok = False
                    continue
                br.pending = (res.z, mu_next)
                survivors.append(br)
                deflation.add(res.z)
            if level_ok or refinement == config.max_step_refinements or refinements_left == 0:
                _progress(
                    f"mu={mu_next:.6g} branches={len(survivors)}"
                    + (f" (refined x{refinement})" if refinement else "")
                )
                break
            refinements_left -= 1
            if mu_next > 0.0:
                mu_next = float(np.sqrt(mu * mu_next))
            else:
                mu_next = 1e-2 * mu
            for br in branches:
                br.pending = None

        for br in branches:
            if br.pending is not None:
                br.z_prev, br.mu_prev = br.z, br.mu
                br.z, br.mu = br.pending
                br.pending = None
            else:
                dead.append(br.branch_id)
        mu_history.append(mu_next)
        branches = survivors

        for _guess_id, z_guess in prev_states:
            if len(branches) >= config.beta_max:
                break
            res = solve_mcp(sys_next, z_guess, solver=config.solver, tol=tol_next,
                            max_iter=config.max_iter_deflation, deflation=deflation,
                            log=step_log, mu=mu_next, phase="deflation",
                            monitor=iterate_monitor)
            if not res.converged:
                failed_deflation += res.iterations
                continue
            br = _Branch(next_id, res.z, mu_next, mu_next)
            br.record = BranchRecord(next_id, res.z, float("nan"), mu_next, 0,
                                     res.iterations, 0,
                                     per_mu=[(mu_next, 0, res.iterations, 0)])
            branches.append(br)
            deflation.add(res.z)
            next_id += 1
            _progress(f"mu={mu_next:.6g} deflation discovered branch {br.branch_id}")

        mu = mu_next
        if mu == 0.0:
            break

    records = []
    for br in sorted(branches, key=lambda b: b.branch_id):
        br.record.z = br.z
        br.record.J = float(problem.objective(br.z))
        records.append(br.record)
    death = bool(dead) or not records
    return RunResult(records, mu_history, death, failed_deflation, step_log)
