"""Fast collocation solver for the integral fractional Laplacian in 1-D."""

from .benchmark import (
    StudyConfig,
    StudyRow,
    convergence_order,
    exact_solution,
    max_norm_error,
    run_convergence_study,
)
from .mesh import GradedMesh, build_graded_mesh, mesh_stats
from .operators import (
    FastOperator,
    apply_fast,
    assemble_direct_matrix,
    audit_solvability,
    build_operator,
    normalization_constant,
)
from .soe import SoeApproximation, build_soe, eval_soe, verify_soe
from .solver import (
    BandedPreconditioner,
    SolveReport,
    banded_solve,
    bicgstab,
    build_banded_preconditioner,
    dense_gaussian_elimination,
)

__version__ = "0.1.0"
