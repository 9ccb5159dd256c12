"""Deflated barrier method for computing multiple stationary points of
density-based topology optimization problems."""

from .barrier import BarrierConfig, BranchRecord, RunResult, run_deflated_barrier
from .problems import REGISTRY

__version__ = "0.1.0"

__all__ = [
    "BarrierConfig",
    "BranchRecord",
    "RunResult",
    "run_deflated_barrier",
    "REGISTRY",
    "__version__",
]
