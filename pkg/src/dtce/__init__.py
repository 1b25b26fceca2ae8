"""Departure-time-choice equilibrium at a single bottleneck.

Analytic Monge-property solvers, an exact discretized LP oracle and a
point-queue verification pipeline.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Commuting3D,
    ConvexCommon,
    DTCEError,
    EarlyLate,
    Family,
    GroupSpec,
    Location,
    PreconditionError,
    Scenario,
    TimeGrid,
    ValidationError,
    check_existence_condition,
    eval_schedule_cost,
)
from .analytic import (  # noqa: E402
    build_modified_costs,
    compare_with_oracle,
    solve_3d,
    solve_analytic,
    solve_fifw,
    solve_oracle,
    solve_vot_both,
    solve_vot_early,
    solve_vot_late,
)
from .queue import reconstruct_arrivals, simulate_point_queue, verify_equilibrium  # noqa: E402

__all__ = [
    "Commuting3D", "ConvexCommon", "DTCEError", "EarlyLate", "Family", "GroupSpec", "Location",
    "PreconditionError", "Scenario", "TimeGrid", "ValidationError", "check_existence_condition",
    "eval_schedule_cost", "build_modified_costs", "compare_with_oracle", "solve_3d", "solve_analytic",
    "solve_fifw", "solve_oracle", "solve_vot_both", "solve_vot_early", "solve_vot_late",
    "reconstruct_arrivals", "simulate_point_queue", "verify_equilibrium", "__version__",
]
