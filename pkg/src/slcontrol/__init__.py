"""Semi-Lagrangian solver and controller synthesis for discounted
stochastic optimal control of (optionally mode-switching) diffusions.

Workflow: describe the problem as a :class:`Model`, lay a :class:`Grid`
over the state box, call :func:`solve` to obtain the value field and the
tabular policy, then validate the synthesized feedback law in closed
loop with :func:`simulate` / :func:`monte_carlo`.
"""

from .bellman import (
    CONTINUOUS,
    SWITCH,
    Decision,
    NonpositiveDt,
    Stencil,
    build_update_table,
    continuous_branch,
    sl_update,
    stencil_points,
    switch_branch,
)
from .grid import (
    DegenerateAxis,
    Grid,
    OutOfRange,
    ValueField,
    build_grid,
    flat_to_multi,
    interpolate,
    interpolation_weights,
    load_value_field,
    multi_to_flat,
    project_to_box,
    save_value_field,
)
from .model import (
    EmptyActionSet,
    EvaluationFailure,
    Model,
    ModelValidationError,
    NonpositiveDiscount,
    NonpositiveSwitchCost,
    validate_model,
)
from .solver import (
    PROJECTION,
    Dirichlet,
    NotConvergedError,
    SolveResult,
    SolveStats,
    SolverConfig,
    bellman_residual,
    gauss_seidel_sweep,
    jacobi_sweep,
    solve,
    sweep_order,
)
from .synthesis import (
    NonpositiveStep,
    Online,
    Policy,
    SimReport,
    Tabular,
    Trajectory,
    extract_policy,
    feedback_action,
    load_policy,
    monte_carlo,
    nearest_node,
    save_policy,
    save_report,
    simulate,
    write_trajectory_csv,
)

__version__ = "0.1.0"
