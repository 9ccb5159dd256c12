"""Writers for the run artifacts: legacy-VTK fields, CSV tables, JSON summaries."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .activeset import StepRecord
from .barrier import BranchRecord, RunResult
from .mesh import Mesh


class OutputError(RuntimeError):
    pass


def write_vtk(mesh: Mesh, fields: dict[str, np.ndarray], path: str | Path,
              title: str = "defbar fields") -> None:
    """Legacy-VTK ASCII unstructured grid with point data on mesh vertices.

    Scalar fields are 1D arrays over vertices; vector fields are (nv, 2) and
    are padded with a zero z-component. Output is bit-stable for fixed input.
    """
    if not fields:
        raise OutputError("empty field set")
    nv = mesh.num_vertices
    for name, arr in fields.items():
        if np.asarray(arr).shape[0] != nv:
            raise OutputError(f"field {name!r} has {np.asarray(arr).shape[0]} values, mesh has {nv} vertices")
    path = Path(path)
    try:
        with path.open("w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"{title}\n")
            fh.write("ASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {nv} double\n")
            for x, y in mesh.vertices:
                fh.write(f"{x:.17g} {y:.17g} 0\n")
            nc = mesh.num_cells
            fh.write(f"CELLS {nc} {4 * nc}\n")
            for a, b, c in mesh.cells:
                fh.write(f"3 {a} {b} {c}\n")
            fh.write(f"CELL_TYPES {nc}\n")
            fh.write("5\n" * nc)
            fh.write(f"POINT_DATA {nv}\n")
            for name, arr in fields.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    fh.write(f"SCALARS {name} double 1\n")
                    fh.write("LOOKUP_TABLE default\n")
                    for v in arr:
                        fh.write(f"{v:.17g}\n")
                else:
                    fh.write(f"VECTORS {name} double\n")
                    for vx, vy in arr:
                        fh.write(f"{vx:.17g} {vy:.17g} 0\n")
    except OSError as exc:
        raise OutputError(f"failed writing VTK to {path}: {exc}") from exc


def write_mesh_vtk(mesh: Mesh, path: str | Path) -> None:
    """Mesh-only dump (a constant placeholder scalar keeps viewers happy)."""
    write_vtk(mesh, {"tag": np.zeros(mesh.num_vertices)}, path, title="defbar mesh")


def write_iterations_csv(branches: Iterable[BranchRecord], path: str | Path) -> None:
    """Long-format per-branch iteration table: branch, mu, phase, iterations."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("branch,mu,phase,iterations\n")
        for br in branches:
            for mu, cont, defl, pred in br.per_mu:
                fh.write(f"{br.branch_id},{mu:.17g},continuation,{cont}\n")
                fh.write(f"{br.branch_id},{mu:.17g},deflation,{defl}\n")
                fh.write(f"{br.branch_id},{mu:.17g},prediction,{pred}\n")


def write_steps_csv(steps: Iterable[StepRecord], path: str | Path) -> None:
    """Per-step solver log: mu, solver, phase, active-set sizes, residual, step length."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("mu,solver,phase,n_lower,n_upper,f_norm,step_length\n")
        for s in steps:
            fh.write(
                f"{s.mu:.17g},{s.solver},{s.phase},{s.n_lower},{s.n_upper},"
                f"{s.f_norm:.17g},{s.step_length:.17g}\n"
            )


def summary_dict(problem_name: str, result: RunResult, config_echo: dict,
                 mesh_stats_pair: tuple[float, float] | None = None,
                 extra: dict | None = None) -> dict:
    branches = []
    for br in result.branches:
        entry = {
            "id": br.branch_id,
            "J": br.J,
            "discovery_mu": br.discovery_mu,
            "iterations": {
                "continuation": br.continuation_iters,
                "deflation": br.deflation_iters,
                "prediction": br.prediction_solves,
            },
        }
        if br.z.shape[0] <= 8:
            entry["z"] = [float(v) for v in br.z]
        branches.append(entry)
    out = {
        "problem": problem_name,
        "branches": branches,
        "branch_death": result.branch_death,
        "failed_deflation_iterations": result.failed_deflation_iterations,
        "mu_levels": len(result.mu_history),
        "config": config_echo,
    }
    if mesh_stats_pair is not None:
        out["mesh"] = {"h_min": mesh_stats_pair[0], "h_max": mesh_stats_pair[1]}
    if extra:
        out.update(extra)
    return out


def write_summary_json(summary: dict, path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
