"""Penalty finite element solver for 2D incompressible flow.

The incompressibility constraint is relaxed through a penalty term that
couples the divergence to the pressure, which decouples into a
positive-definite velocity problem; time stepping is implicit Euler
with a lagged-convection Picard loop.  Element pairs: Taylor-Hood
(P2-P1, P3-P2) and the nonconforming Crouzeix-Raviart pair (CR-P0).

Layers: ``mesh`` -> ``fespace`` -> ``assembly`` -> ``solver`` ->
``stepper`` -> ``analysis`` -> ``harness`` -> ``cli``.
"""

from .mesh import TriangleMesh, read_mesh, unit_square_mesh, write_mesh
from .fespace import (FAMILIES, FunctionSpace, build_space, evaluate,
                      interpolate, locate_points, quadrature)
from .assembly import (LoadAssembler, apply_dirichlet, assemble_convection,
                       assemble_divergence, assemble_grad_div, assemble_load,
                       assemble_mass, assemble_stiffness, operator_degree)
from .solver import (LinearSolveError, ParameterError, PenalizedSystem,
                     PicardConfig, PicardDivergenceError, PicardStats,
                     linear_solve, nonlinear_solve)
from .stepper import (ELEMENT_PAIRS, PAIR_DEGREE, RunConfig, RunResult,
                      State, SteppingError, TransientSolver, num_steps,
                      project_initial, read_checkpoint, write_checkpoint)
from .analysis import (ErrorTriple, ManufacturedCase, convergence_rates,
                       divergence_l2, error_norms, polynomial_vortex)
from .harness import (CavityReport, ExperimentReport, IngestionError,
                      StudyRow, emit_outputs, lid_bc, load_reference_profiles,
                      penalty_slope, read_reference_profile, run_cavity,
                      run_penalty_study, run_rough_start_study,
                      run_spatial_study, run_temporal_study,
                      write_cavity_outputs)

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh", "read_mesh", "unit_square_mesh", "write_mesh",
    "FAMILIES", "FunctionSpace", "build_space", "evaluate", "interpolate",
    "locate_points", "quadrature",
    "LoadAssembler", "apply_dirichlet", "assemble_convection",
    "assemble_divergence", "assemble_grad_div", "assemble_load",
    "assemble_mass", "assemble_stiffness", "operator_degree",
    "LinearSolveError", "ParameterError", "PenalizedSystem", "PicardConfig",
    "PicardDivergenceError", "PicardStats", "linear_solve", "nonlinear_solve",
    "ELEMENT_PAIRS", "PAIR_DEGREE", "RunConfig", "RunResult", "State",
    "SteppingError", "TransientSolver", "num_steps", "project_initial",
    "read_checkpoint", "write_checkpoint",
    "ErrorTriple", "ManufacturedCase", "convergence_rates", "divergence_l2",
    "error_norms", "polynomial_vortex",
    "CavityReport", "ExperimentReport", "IngestionError", "StudyRow",
    "emit_outputs", "lid_bc", "load_reference_profiles", "penalty_slope",
    "read_reference_profile", "run_cavity", "run_penalty_study",
    "run_rough_start_study", "run_spatial_study", "run_temporal_study",
    "write_cavity_outputs",
    "__version__",
]
