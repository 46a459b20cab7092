"""Optimal transport with global invariances.

Jointly estimates a transport coupling and a linear map constrained to a
Schatten norm ball, by alternating entropic OT steps with closed-form map
updates under an annealed regularization.
"""

__version__ = "0.1.0"

from .core import (
    Coupling,
    CouplingReport,
    Histogram,
    InvalidInputError,
    InvarianceBall,
    LinearMap,
    NumericalFailureError,
    PointSet,
    SingularInputError,
    barycentric_image,
    schatten_norm,
    validate_coupling,
)
from .procrustes import optimal_map_in_ball, random_feasible_map
from .sinkhorn import CostKind, CostMatrix, SinkhornSettings, exact_ot, exact_ot_small, pairwise_sq_dist, sinkhorn_solve
from .solver import (
    AlignmentResult,
    Enforcement,
    SolverConfig,
    SolveTrace,
    TraceRecord,
    solve,
    whiten_pointset,
    whiteness_check,
)

__all__ = [
    "AlignmentResult",
    "CostKind",
    "CostMatrix",
    "Coupling",
    "CouplingReport",
    "Enforcement",
    "Histogram",
    "InvalidInputError",
    "InvarianceBall",
    "LinearMap",
    "NumericalFailureError",
    "PointSet",
    "SingularInputError",
    "SinkhornSettings",
    "SolveTrace",
    "SolverConfig",
    "TraceRecord",
    "barycentric_image",
    "exact_ot",
    "exact_ot_small",
    "optimal_map_in_ball",
    "pairwise_sq_dist",
    "random_feasible_map",
    "schatten_norm",
    "sinkhorn_solve",
    "solve",
    "validate_coupling",
    "whiten_pointset",
    "whiteness_check",
]
