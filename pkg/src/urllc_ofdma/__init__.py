"""Power and resource-element allocation for short-packet OFDMA downlinks.

The library couples a finite-blocklength rate model (normal approximation
with channel dispersion) to a successive-convex-approximation allocator:
big-M decoupling of the assignment-power product, a box relaxation with a
binariness penalty, tangent surrogates for the concave terms, and a
structured log-barrier interior-point solver for the convex subproblems.
A Monte-Carlo harness reproduces benchmark sweeps over transmit power and
user count.
"""

from .barrier import InnerConfig, InnerSolution, solve
from .fbl import (LOG2E, RatePoint, UserBitBudget, dispersion,
                  dispersion_penalty_grad, normal_approx_bits, q_inv,
                  user_bits)
from .model import (AllocationState, ChannelGenSpec, FeasibilityReport,
                    ProblemInstance, check_feasible, dbm_to_watt,
                    generate_instance, pathloss_db, sum_throughput_metric,
                    watt_to_dbm)
from .sca import (SolveReport, SolverConfig, exact_penalized_objective,
                  initialize, sca_solve)
from .schemes import (SchemeId, oracle_solve, run_scheme, solve_benchmark1,
                      solve_benchmark2, solve_proposed, solve_upper_bound)
from .subproblem import (ConvexSubproblem, build_assignment_subproblem,
                         build_power_subproblem, build_subproblem,
                         default_beta, linearize_square_sum, penalty_terms)
from .experiments import (ExperimentSpec, ResultTable, emit_results,
                          run_experiment)

__version__ = "0.1.0"

__all__ = [
    "AllocationState", "ChannelGenSpec", "ConvexSubproblem",
    "ExperimentSpec", "FeasibilityReport", "InnerConfig", "InnerSolution",
    "LOG2E", "ProblemInstance", "RatePoint", "ResultTable", "SchemeId",
    "SolveReport", "SolverConfig", "UserBitBudget",
    "build_assignment_subproblem", "build_power_subproblem",
    "build_subproblem", "check_feasible", "dbm_to_watt", "default_beta",
    "dispersion", "dispersion_penalty_grad", "emit_results",
    "exact_penalized_objective", "generate_instance", "initialize",
    "linearize_square_sum", "normal_approx_bits", "oracle_solve",
    "pathloss_db", "penalty_terms", "q_inv", "run_experiment", "run_scheme",
    "sca_solve", "solve", "solve_benchmark1", "solve_benchmark2",
    "solve_proposed", "solve_upper_bound", "sum_throughput_metric",
    "user_bits", "watt_to_dbm",
]
