"""Deflation of previously found density fields.

The operator multiplies the residual by m(z) = prod_i (||rho - rho_i||^-p + sigma),
with the norm realized by the P1 mass matrix on the density block. Newton updates
of the deflated system are recovered from undeflated updates by a Sherman-Morrison
scaling, so the deflated Jacobian is never assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DeflatedPointError(ValueError):
    """The evaluation point coincides with a stored (deflated) solution."""


class DeflationBreakdownError(RuntimeError):
    """The Sherman-Morrison denominator vanished; the caller abandons this guess."""


@dataclass
class DeflationOperator:
    """Append-only collection of deflated density fields.

    gram: SPD matrix realizing the squared distance (rho-block L2 mass matrix).
    rho_slice: slice selecting the density block out of the full state vector.
    """

    gram: sp.spmatrix
    rho_slice: slice
    power: float = 2.0
    shift: float = 1.0
    solutions: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.power <= 0 or self.shift <= 0:
            raise ValueError("deflation requires power > 0 and shift > 0")
        self.gram = sp.csr_matrix(self.gram)

    def is_empty(self) -> bool:
        return not self.solutions

    def add(self, z: np.ndarray) -> None:
        self.solutions.append(np.array(z[self.rho_slice], dtype=float, copy=True))

    def _rho(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.rho_slice]

    def _sq_distances(self, rho: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.solutions))
        for i, sol in enumerate(self.solutions):
            diff = rho - sol
            out[i] = float(diff @ (self.gram @ diff))
        return out

    def min_distance(self, z: np.ndarray) -> float:
        """L2 distance from rho(z) to the nearest stored solution (inf if empty)."""
        if self.is_empty():
            return float("inf")
        return float(np.sqrt(np.min(self._sq_distances(self._rho(z)))))

    def m_value(self, z: np.ndarray) -> float:
        """prod_i (||rho - rho_i||^-p + sigma); 1 for an empty operator."""
        if self.is_empty():
            return 1.0
        d = self._sq_distances(self._rho(z))
        if np.any(d == 0.0):
            raise DeflatedPointError("evaluation point equals a deflated solution")
        return float(np.prod(d ** (-self.power / 2.0) + self.shift))

    def m_gradient(self, z: np.ndarray) -> np.ndarray:
        """Gradient of m_value w.r.t. the state coefficients (nonzero only on the rho-block)."""
        grad = np.zeros(np.asarray(z).shape[0])
        if self.is_empty():
            return grad
        rho = self._rho(z)
        d = self._sq_distances(rho)
        if np.any(d == 0.0):
            raise DeflatedPointError("evaluation point equals a deflated solution")
        factors = d ** (-self.power / 2.0) + self.shift
        g_rho = np.zeros_like(rho)
        for i, sol in enumerate(self.solutions):
            others = np.prod(np.delete(factors, i)) if len(factors) > 1 else 1.0
            dfac = (-self.power / 2.0) * d[i] ** (-self.power / 2.0 - 1.0)
            g_rho += others * dfac * 2.0 * (self.gram @ (rho - sol))
        grad[self.rho_slice] = g_rho
        return grad


def m_value(op: DeflationOperator, z: np.ndarray) -> float:
    return op.m_value(z)


def m_gradient(op: DeflationOperator, z: np.ndarray) -> np.ndarray:
    return op.m_gradient(z)


def deflate_update(dy: np.ndarray, op: DeflationOperator, z: np.ndarray) -> np.ndarray:
    """Scale an undeflated Newton update into the deflated one (Sherman-Morrison)."""
    if op.is_empty():
        return np.array(dy, copy=True)
    m = op.m_value(z)
    inner = float(op.m_gradient(z) @ dy) / m
    denom = 1.0 - inner
    if abs(denom) < 1e-12:
        raise DeflationBreakdownError("Sherman-Morrison denominator vanished")
    return (1.0 + inner / denom) * np.asarray(dy, dtype=float)
