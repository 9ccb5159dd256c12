"""Command-line front end: run a named problem, write fields, tables and figures."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import output, problems
from .activeset import solve_mcp
from .barrier import BarrierConfig, run_deflated_barrier
from .mesh import mesh_stats
from .problems import REGISTRY, ObstacleParams


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit(2); the CLI reserves 2 for "no branches"
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="defbar", description="Deflated barrier method for topology optimization")
    p.add_argument("--problem", help="problem name (see registry)")
    p.add_argument("--nx", type=int, help="cells along x")
    p.add_argument("--ny", type=int, help="cells along y (obstacle: grid size)")
    p.add_argument("--mu0", type=float, help="initial barrier parameter")
    p.add_argument("--solver", choices=["hik", "bm"], help="subproblem solver")
    p.add_argument("--predictor", choices=["none", "secant", "tangent", "feasible-tangent"],
                   help="initial-guess generator between barrier levels")
    p.add_argument("--max-branches", type=int, help="maximum number of branches sought")
    p.add_argument("--tol", type=float, help="subproblem residual tolerance")
    p.add_argument("--eps-log", type=float, help="feasible-set enlargement")
    p.add_argument("--output", default="defbar-out", help="output directory")
    p.add_argument("--config", help="JSON config file (flags override file values)")
    p.add_argument("--check-equivalence", action="store_true",
                   help="obstacle problem: report the HIK/BM half-step discrepancy")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figure rendering")
    return p


def _verbose() -> bool:
    return bool(os.environ.get("DEFBAR_LOG", ""))


def _log(msg: str) -> None:
    if _verbose():
        print(msg, file=sys.stderr)


def _merge_config(args: argparse.Namespace) -> dict:
    """Defaults < JSON config file < explicit flags."""
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        cfg.update(json.loads(path.read_text()))
    for key in ("problem", "nx", "ny", "mu0", "solver", "predictor",
                "max_branches", "tol", "eps_log"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    return cfg


def _run_obstacle(cfg: dict, outdir: Path, check_equivalence: bool) -> int:
    n = int(cfg.get("ny") or cfg.get("nx") or 64)
    x = np.linspace(0.0, 1.0, n + 2)[1:-1]
    f = 50.0 * np.sin(3.0 * np.pi * x)
    phi = np.zeros(n)
    params = ObstacleParams(n=n, f=f, phi=phi)
    system = problems.obstacle_qp(params)
    res = solve_mcp(system, phi.copy(), solver=cfg.get("solver", "bm"),
                    tol=cfg.get("tol", 1e-10), max_iter=100)
    summary = {
        "problem": "obstacle",
        "n": n,
        "converged": res.converged,
        "iterations": res.iterations,
        "active_lower": int(np.sum(res.z <= phi)),
        "config": {k: cfg[k] for k in sorted(cfg)},
    }
    if check_equivalence:
        worst = 0.0
        rng = np.random.default_rng(1234)
        for size in (8, 16, 32, 64):
            for _ in range(5):
                load = rng.standard_normal(size) * 60.0
                rep = problems.obstacle_equivalence_report(
                    ObstacleParams(n=size, f=load, phi=np.zeros(size))
                )
                worst = max(worst, rep.max_update_discrepancy, rep.max_halfstep_discrepancy)
        print(f"max HIK/BM update discrepancy: {worst:.3e}")
        summary["equivalence_max_discrepancy"] = worst
    output.write_summary_json(summary, outdir / "summary.json")
    return 0 if res.converged else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge_config(args)
        name = cfg.get("problem")
        if not name:
            raise UsageError("--problem is required")
        if name not in REGISTRY:
            raise UsageError(
                f"unknown problem {name!r}; available: {', '.join(sorted(REGISTRY))}"
            )
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"problems: {', '.join(sorted(REGISTRY))}", file=sys.stderr)
        return 1

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    entry = REGISTRY[name]

    if entry.kind == "mcp":
        return _run_obstacle(cfg, outdir, args.check_equivalence)

    eps_log = cfg.get("eps_log", problems.DEFAULT_EPS_LOG)
    nx = int(cfg.get("nx", entry.default_nx))
    ny = int(cfg.get("ny", entry.default_ny))
    problem = entry.build(nx, ny, eps_log)
    config = BarrierConfig(
        mu0=float(cfg.get("mu0", entry.default_mu0)),
        tol=float(cfg.get("tol", 1e-7)),
        beta_max=int(cfg.get("max_branches", entry.default_beta_max)),
        eps_log=eps_log,
        solver=cfg.get("solver", entry.default_solver),
        predictor=cfg.get("predictor", entry.default_predictor),
    )
    _log(f"running {name}: mu0={config.mu0} solver={config.solver} "
         f"predictor={config.predictor} beta_max={config.beta_max}")
    result = run_deflated_barrier(problem, config)
    _log(f"finished: {len(result.branches)} branches over {len(result.mu_history)} mu levels")

    stats = mesh_stats(problem.mesh) if problem.mesh is not None else None
    config_echo = {
        "mu0": config.mu0, "tol": config.tol, "beta_max": config.beta_max,
        "eps_log": config.eps_log, "solver": config.solver,
        "predictor": config.predictor, "nx": nx, "ny": ny,
    }
    summary = output.summary_dict(name, result, config_echo, stats)
    output.write_summary_json(summary, outdir / "summary.json")
    output.write_iterations_csv(result.branches, outdir / "iterations.csv")
    output.write_steps_csv(result.step_log, outdir / "steps.csv")

    for br in result.branches:
        fields = problem.output_fields(br.z)
        if problem.mesh is not None and fields:
            output.write_vtk(problem.mesh, fields, outdir / f"branch_{br.branch_id}.vtk",
                             title=f"{name} branch {br.branch_id}")
            if not args.no_figures:
                from . import plots

                plots.density_figure(problem.mesh, fields["rho"],
                                     outdir / f"branch_{br.branch_id}.png",
                                     title=f"branch {br.branch_id}: J={br.J:.6g}")
    if result.branches and not args.no_figures:
        from . import plots

        plots.iteration_figure(result.branches, outdir / "iterations.png")

    return 0 if result.branches else 2


if __name__ == "__main__":
    raise SystemExit(main())
