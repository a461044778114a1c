"""Stochastic parabolic optimal control with an integral state constraint.

P1 finite elements and implicit Euler discretize the controlled stochastic
heat equation; a gradient projection loop enforces the space-time integral
constraint on the expected state through a scalar multiplier.  See the
README for the CLI and the experiment harness.
"""

from .errors import InvalidStateError, NumericalError
from .grid import Mesh, TimeGrid, make_interval_mesh, make_rectangle_mesh, make_time_grid
from .fem import FemSystem, assemble, euler_solve, l2_project, load_vector, norms
from .paths import BrownianEnsemble, mc_mean, sample, strong_error_norm
from .spde import (
    PathEnsembleTrajectory,
    ProblemSpec,
    Trajectory,
    ZEstimate,
    backward_mean_adjoint,
    forward_mean,
    forward_paths,
    lsmc_z_estimate,
    mtilde_solve,
    qtilde_solve,
)
from .optimizer import (
    GpResult,
    GradientProjection,
    IterationRecord,
    OptimizerConfig,
    constraint_integral,
    contraction_certificate,
    gp_iterate,
    select_multiplier,
)
from .problems import ManufacturedProblem, example1, example2, verify_manufactured
from .analysis import (
    ErrorReport,
    OrderFit,
    Resolution,
    SolutionBundle,
    TableCell,
    compute_errors,
    constraint_table,
    convergence_study,
    discrete_constraint_level,
    fit_order,
    orders_from_reports,
)

__all__ = [
    "BrownianEnsemble",
    "ErrorReport",
    "FemSystem",
    "GpResult",
    "GradientProjection",
    "InvalidStateError",
    "IterationRecord",
    "ManufacturedProblem",
    "Mesh",
    "NumericalError",
    "OptimizerConfig",
    "OrderFit",
    "PathEnsembleTrajectory",
    "ProblemSpec",
    "Resolution",
    "SolutionBundle",
    "TableCell",
    "TimeGrid",
    "Trajectory",
    "ZEstimate",
    "assemble",
    "backward_mean_adjoint",
    "compute_errors",
    "constraint_integral",
    "constraint_table",
    "contraction_certificate",
    "convergence_study",
    "discrete_constraint_level",
    "euler_solve",
    "example1",
    "example2",
    "fit_order",
    "forward_mean",
    "forward_paths",
    "gp_iterate",
    "l2_project",
    "load_vector",
    "lsmc_z_estimate",
    "make_interval_mesh",
    "make_rectangle_mesh",
    "make_time_grid",
    "mc_mean",
    "mtilde_solve",
    "norms",
    "orders_from_reports",
    "qtilde_solve",
    "sample",
    "select_multiplier",
    "strong_error_norm",
    "verify_manufactured",
]
