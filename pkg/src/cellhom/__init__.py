"""Effective tensors of oscillatory coefficients from truncated cell problems.

The package computes homogenized coefficients four ways -- a periodic
reference, the classical Dirichlet-truncated cell problem, a filtered
parabolic route, and a spectrally corrected elliptic route -- sharing one
Q1 finite element core so the discrete identities between them hold to
solver precision.  See the README for the method map and the CLI.
"""

from .errors import (
    CellHomError,
    ConfigError,
    IntegratorFailure,
    InvalidInputError,
    SolverFailure,
)
from .fields import (
    TensorField,
    benchmark_tensor_2d,
    checkerboard_field,
    constant_field,
    estimate_bounds,
    eval_tensor,
    parse_field_spec,
)
from .filters import BoxFilter, Filter, eval_box_filter, make_filter
from .fem import (
    FemSystem,
    Grid,
    assemble,
    build_grid,
    filtered_bilinear,
    filtered_flux_average,
    filtered_flux_tensor,
    filtered_mass_matrix,
    integrate_coefficient,
    node_coordinates,
)
from .linalg import EigPairs, SparseSym, cg_solve, smallest_eigpairs
from .timestepping import HeatEvolution, StepControl, evolve_heat
from .methods import (
    HomogenizedTensor,
    MethodParams,
    ParabolicTrajectory,
    optimal_params,
    solve_elliptic_dirichlet,
    solve_modified_elliptic,
    solve_periodic_reference,
    upscale_parabolic,
    evolve_parabolic,
)
from .harness import (
    RunConfig,
    RunRecord,
    SweepConfig,
    SweepResult,
    emit_results,
    fit_loglog,
    preset_r_values,
    reference_tensor,
    run_once,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "CellHomError", "ConfigError", "IntegratorFailure", "InvalidInputError",
    "SolverFailure",
    "TensorField", "benchmark_tensor_2d", "checkerboard_field", "constant_field",
    "estimate_bounds", "eval_tensor", "parse_field_spec",
    "BoxFilter", "Filter", "eval_box_filter", "make_filter",
    "FemSystem", "Grid", "assemble", "build_grid", "filtered_bilinear",
    "filtered_flux_average", "filtered_flux_tensor", "filtered_mass_matrix",
    "integrate_coefficient", "node_coordinates",
    "EigPairs", "SparseSym", "cg_solve", "smallest_eigpairs",
    "HeatEvolution", "StepControl", "evolve_heat",
    "HomogenizedTensor", "MethodParams", "ParabolicTrajectory", "optimal_params",
    "solve_elliptic_dirichlet", "solve_modified_elliptic",
    "solve_periodic_reference", "upscale_parabolic", "evolve_parabolic",
    "RunConfig", "RunRecord", "SweepConfig", "SweepResult", "emit_results",
    "fit_loglog", "preset_r_values", "reference_tensor", "run_once", "run_sweep",
    "__version__",
]
