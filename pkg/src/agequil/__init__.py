"""Equilibria and bifurcation branches of age- and space-structured
population models with nonlinear diffusion on the unit interval."""

from .continuation import (
    Branch,
    BranchPoint,
    BranchStats,
    ContinuationError,
    NormTarget,
    Plane,
    branch_stats,
    correct,
    first_step,
    solve_at_norm,
    trace_branch,
)
from .discretize import AssemblyError, SpatialMesh, assemble
from .evolution import (
    AgeGrid,
    DensityField,
    EvolutionError,
    EvolutionOperator,
    apply_K0,
    build_evolution,
    propagate,
)
from .fixedpoint import (
    FixedPointError,
    FixedPointResult,
    ShellReport,
    check_shell_conditions,
    multistart_fixedpoint,
    solve_fixedpoint,
)
from .linearized import (
    LinearizedError,
    LinearizedOperators,
    apply_birth_feedback,
    apply_perturbation,
    birth_feedback_eigenvalue,
    build_linearized,
    reformulation_residual,
    solve_linear,
)
from .model import (
    ModelError,
    ModelSpec,
    parse_grid,
    parse_model,
    serialize_model,
    validate_model,
    with_cb,
)
from .reproduction import (
    PowerIterationError,
    ReproductionError,
    ReproductionOperator,
    assemble_Q,
    birth_functional,
    characteristic_values,
    normalize,
    spectral_radius,
)

__version__ = "0.1.0"

__all__ = [
    "AgeGrid",
    "AssemblyError",
    "Branch",
    "BranchPoint",
    "BranchStats",
    "ContinuationError",
    "DensityField",
    "EvolutionError",
    "EvolutionOperator",
    "FixedPointError",
    "FixedPointResult",
    "LinearizedError",
    "LinearizedOperators",
    "ModelError",
    "ModelSpec",
    "NormTarget",
    "Plane",
    "PowerIterationError",
    "ReproductionError",
    "ReproductionOperator",
    "ShellReport",
    "SpatialMesh",
    "apply_K0",
    "apply_birth_feedback",
    "apply_perturbation",
    "assemble",
    "assemble_Q",
    "birth_feedback_eigenvalue",
    "birth_functional",
    "branch_stats",
    "build_evolution",
    "build_linearized",
    "characteristic_values",
    "check_shell_conditions",
    "correct",
    "first_step",
    "multistart_fixedpoint",
    "normalize",
    "parse_grid",
    "parse_model",
    "propagate",
    "reformulation_residual",
    "serialize_model",
    "solve_at_norm",
    "solve_fixedpoint",
    "solve_linear",
    "spectral_radius",
    "trace_branch",
    "validate_model",
    "with_cb",
]
