"""Structured triangulations of rectangles with tagged boundary segments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class InvalidSpecError(ValueError):
    pass


class AmbiguousTagError(ValueError):
    pass


@dataclass(frozen=True)
class RectangleSpec:
    """Axis-aligned rectangle (0,width)x(0,height) split into nx*ny grid cells."""

    width: float
    height: float
    nx: int
    ny: int
    diagonal: str = "right"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidSpecError(f"rectangle sides must be positive, got {self.width}x{self.height}")
        if self.nx < 1 or self.ny < 1:
            raise InvalidSpecError(f"cell counts must be >= 1, got nx={self.nx}, ny={self.ny}")
        if self.diagonal not in ("left", "right", "crossed"):
            raise InvalidSpecError(f"unknown diagonal {self.diagonal!r}")


@dataclass(frozen=True)
class Mesh:
    """Conforming triangle mesh.

    vertices: (nv, 2) coordinates.
    cells: (nc, 3) vertex indices, positively oriented.
    boundary_edges: (nb, 2) vertex pairs lying on the boundary.
    boundary_tags: (nb,) integer tag per boundary edge (0 = untagged).
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    width: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))
        object.__setattr__(self, "boundary_edges", np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_tags", np.asarray(self.boundary_tags, dtype=np.int64))
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)
        self.boundary_edges.setflags(write=False)
        self.boundary_tags.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_coords(self) -> np.ndarray:
        """(nc, 3, 2) vertex coordinates per cell."""
        return self.vertices[self.cells]

    def signed_areas(self) -> np.ndarray:
        xy = self.cell_coords()
        d1 = xy[:, 1] - xy[:, 0]
        d2 = xy[:, 2] - xy[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> np.ndarray:
        """All unique undirected edges, (ne, 2), sorted vertex pairs."""
        raw = np.vstack([self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [2, 0]]])
        raw.sort(axis=1)
        return np.unique(raw, axis=0)

    def edge_midpoints(self, edges: np.ndarray) -> np.ndarray:
        return 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])


def build_rect_mesh(spec: RectangleSpec) -> Mesh:
    """Triangulate a rectangle; boundary edges are tag 0 until tag_boundary is applied."""
    nx, ny = spec.nx, spec.ny
    xs = np.linspace(0.0, spec.width, nx + 1)
    ys = np.linspace(0.0, spec.height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I = I.ravel()
    J = J.ravel()
    v00 = vid(I, J)
    v10 = vid(I + 1, J)
    v01 = vid(I, J + 1)
    v11 = vid(I + 1, J + 1)

    if spec.diagonal == "right":
        # diagonal from lower-left to upper-right
        cells = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
        vertices = grid
    elif spec.diagonal == "left":
        # diagonal from lower-right to upper-left
        cells = np.vstack([np.column_stack([v00, v10, v01]), np.column_stack([v10, v11, v01])])
        vertices = grid
    else:  # crossed: one centroid vertex per grid cell, four triangles
        centers = np.column_stack([0.5 * (xs[I] + xs[I + 1]), 0.5 * (ys[J] + ys[J + 1])])
        vc = grid.shape[0] + np.arange(nx * ny)
        vertices = np.vstack([grid, centers])
        cells = np.vstack(
            [
                np.column_stack([v00, v10, vc]),
                np.column_stack([v10, v11, vc]),
                np.column_stack([v11, v01, vc]),
                np.column_stack([v01, v00, vc]),
            ]
        )

    mesh = Mesh(
        vertices=vertices,
        cells=cells,
        boundary_edges=_find_boundary_edges(cells),
        boundary_tags=np.zeros(0, dtype=np.int64),
        width=spec.width,
        height=spec.height,
    )
    nb = mesh.boundary_edges.shape[0]
    return Mesh(mesh.vertices, mesh.cells, mesh.boundary_edges, np.zeros(nb, dtype=np.int64), spec.width, spec.height)


def _find_boundary_edges(cells: np.ndarray) -> np.ndarray:
    raw = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    key = np.sort(raw, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return uniq[counts == 1]


def tag_boundary(mesh: Mesh, segments: Sequence[tuple[Callable[[float, float], bool], int]]) -> Mesh:
    """Assign tags to boundary edges whose midpoints satisfy a predicate.

    Each predicate takes the midpoint coordinates (x, y). Overlapping predicates
    on one edge raise AmbiguousTagError; untouched edges keep tag 0.
    """
    mids = mesh.edge_midpoints(mesh.boundary_edges)
    tags = np.zeros(mesh.boundary_edges.shape[0], dtype=np.int64)
    claimed = np.zeros(tags.shape[0], dtype=bool)
    for pred, tag in segments:
        hit = np.array([bool(pred(x, y)) for x, y in mids])
        clash = hit & claimed
        if clash.any():
            raise AmbiguousTagError(f"{int(clash.sum())} boundary edges matched by more than one predicate")
        tags[hit] = tag
        claimed |= hit
    return Mesh(mesh.vertices, mesh.cells, mesh.boundary_edges, tags, mesh.width, mesh.height)


def mesh_stats(mesh: Mesh) -> tuple[float, float]:
    """(h_min, h_max): min/max over cells of the cell's longest edge."""
    if mesh.num_cells == 0:
        raise InvalidSpecError("empty mesh")
    xy = mesh.cell_coords()
    e0 = np.linalg.norm(xy[:, 1] - xy[:, 0], axis=1)
    e1 = np.linalg.norm(xy[:, 2] - xy[:, 1], axis=1)
    e2 = np.linalg.norm(xy[:, 0] - xy[:, 2], axis=1)
    diam = np.maximum(np.maximum(e0, e1), e2)
    return float(diam.min()), float(diam.max())


def interval_predicate(axis: str, fixed: float, lo: float, hi: float, tol: float = 1e-12):
    """Predicate for an axis-aligned boundary strip: axis='x' means the strip x==fixed, lo<=y<=hi."""
    if axis == "x":
        return lambda x, y: abs(x - fixed) <= tol and lo - tol <= y <= hi + tol
    if axis == "y":
        return lambda x, y: abs(y - fixed) <= tol and lo - tol <= x <= hi + tol
    raise InvalidSpecError(f"axis must be 'x' or 'y', got {axis!r}")
