"""Figure rendering for run reports: density fields and iteration histories."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.tri import Triangulation

from .barrier import BranchRecord
from .mesh import Mesh


def density_figure(mesh: Mesh, rho: np.ndarray, path: str | Path, title: str = "") -> None:
    """Material distribution as in the reference figures: black = 0, white = 1."""
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.cells)
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * mesh.height / max(mesh.width, 1e-12)))
    ax.tripcolor(tri, np.clip(rho, 0.0, 1.0), shading="gouraud", cmap="gray", vmin=0.0, vmax=1.0)
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def iteration_figure(branches: list[BranchRecord], path: str | Path) -> None:
    """Per-branch continuation iterations against the barrier parameter."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for br in branches:
        mus = [row[0] for row in br.per_mu]
        iters = [row[1] for row in br.per_mu]
        floor = min((m for m in mus if m > 0), default=1e-12)
        xs = [m if m > 0 else floor * 0.1 for m in mus]
        ax.plot(xs, iters, marker="o", markersize=3, label=f"branch {br.branch_id}")
    ax.set_xscale("log")
    ax.set_xlabel("barrier parameter")
    ax.set_ylabel("corrector iterations")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
