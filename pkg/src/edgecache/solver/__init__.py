"""Resource-allocation solvers for a fixed caching decision."""

from edgecache.solver.core import (
    DualVariables,
    SolveResult,
    kkt_residuals,
    solve_allocation,
    solve_allocation_batch,
)

__all__ = [
    "DualVariables",
    "SolveResult",
    "kkt_residuals",
    "solve_allocation",
    "solve_allocation_batch",
]
