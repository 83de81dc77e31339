"""Stochastic linear-quadratic optimal control over long horizons:
Riccati flows, the stationary optimization problem, closed-loop moment
propagation, Monte Carlo cross-checks, and turnpike certification."""

from .model import (DimensionError, InvalidProblemError, LQProblem,
                    ReducedLQProblem, ValidationReport, dump_problem,
                    example_problem, load_problem, reduce_problem, validate)
from .riccati import (AreSolution, ConvergenceBudgetError, DecayRateFit,
                      FlowDivergence, GainMaps, MatrixTrajectory,
                      VectorTrajectory, backward_riccati, default_step,
                      finite_horizon_riccati, gain_schedule,
                      measure_decay_rate, phi_turnpike_ode, phi_value_ode,
                      sigma_flow, solve_are)
from .stability import (StabilityReport, StabilizabilityResult,
                        is_ms_stable, is_stabilizable,
                        matrix_exponential_decay, ms_generator,
                        second_moment_flow)
from .static_opt import (NaiveStaticSolution, StaticComparison,
                         StaticSolution, solve_naive_static, solve_static,
                         static_divergence_report)
from .dynamics import (McEnsemble, MeanTrajectory, MomentTrajectory,
                       feedback_cost, integral_second_moment, mean_flow,
                       moment_flow, optimal_control_offset, simulate_mc,
                       value_function)
from .turnpike import (TimeAverageRow, TurnpikeFit, ValueAverageReport,
                       WindowCheck, fit_envelope, interior_window_check,
                       time_average_check, value_average_check)
from .workflow import (HorizonSolution, TurnpikeStudy, solve_horizon,
                       turnpike_study)

__version__ = "0.1.0"
