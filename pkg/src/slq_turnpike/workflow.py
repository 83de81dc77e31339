"""End-to-end wiring: reduce, solve, propagate, certify.

Convenience layer over the solver modules so the CLI, the demos, and the
test-suite assemble identical pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dynamics, riccati, static_opt, turnpike
from .model import LQProblem, ReducedLQProblem, reduce_problem


@dataclass
class HorizonSolution:
    """All finite-horizon ingredients for one (problem, T, h) triple."""

    problem: ReducedLQProblem
    T: float
    h: float
    are: riccati.AreSolution
    static: static_opt.StaticSolution
    pt: riccati.MatrixTrajectory              # P_T on [0, T]
    gains: riccati.MatrixTrajectory           # K(P_T(t))
    phi_value: riccati.VectorTrajectory       # terminal-zero offset
    phi_turnpike: riccati.VectorTrajectory    # terminal -lambda* offset

    @property
    def grid(self) -> np.ndarray:
        return self.pt.grid

    def mean(self, x0) -> dynamics.MeanTrajectory:
        return dynamics.mean_flow(self.problem, self.pt, self.phi_turnpike,
                                  self.are, self.static, x0, gains=self.gains)

    def moments(self, x0) -> dynamics.MomentTrajectory:
        return dynamics.moment_flow(self.problem, self.pt, self.phi_turnpike,
                                    self.are, self.static, x0, gains=self.gains)

    def value(self, x0) -> float:
        return dynamics.value_function(self.problem, self.pt, self.phi_value, x0)

    def control_offsets(self) -> np.ndarray:
        return dynamics.optimal_control_offset(self.problem, self.pt,
                                               self.phi_turnpike, self.are,
                                               self.static, gains=self.gains)

    def monte_carlo(self, x0, n_paths: int, seed: int,
                    **kwargs) -> dynamics.McEnsemble:
        return dynamics.simulate_mc(self.problem, self.gains,
                                    self.control_offsets(), x0, n_paths,
                                    seed, **kwargs)


def prepare(problem) -> ReducedLQProblem:
    """Accept a full or already-reduced problem and return the reduced form."""
    if isinstance(problem, ReducedLQProblem):
        return problem
    if isinstance(problem, LQProblem):
        return reduce_problem(problem)
    raise TypeError(f"expected a problem instance, got {type(problem).__name__}")


def solve_horizon(problem, T: float, h: Optional[float] = None,
                  are: Optional[riccati.AreSolution] = None,
                  static: Optional[static_opt.StaticSolution] = None) -> HorizonSolution:
    """Assemble the full finite-horizon solution bundle for one horizon."""
    reduced = prepare(problem)
    h = riccati.default_step(reduced) if h is None else h
    if are is None:
        are = riccati.solve_are(reduced, h=h)
    if static is None:
        static = static_opt.solve_static(reduced, are)
    pt = riccati.finite_horizon_riccati(reduced, T, h)
    gains = riccati.gain_schedule(reduced, pt)
    phi_value = riccati.phi_value_ode(reduced, pt, gains=gains)
    phi_tp = riccati.phi_turnpike_ode(reduced, pt, are.P, static.lambda_star,
                                      static.sigma_star, gains=gains)
    return HorizonSolution(problem=reduced, T=float(T), h=h, are=are,
                           static=static, pt=pt, gains=gains,
                           phi_value=phi_value, phi_turnpike=phi_tp)


@dataclass
class TurnpikeStudy:
    """Results of the multi-horizon certification run."""

    x0: np.ndarray
    T_list: list
    fits: list                                    # TurnpikeFit per horizon
    window_checks: list                           # WindowCheck per horizon
    time_average: list                            # TimeAverageRow per horizon
    value_average: turnpike.ValueAverageReport
    means: list = field(repr=False, default_factory=list)
    horizons: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0.tolist(),
            "T_list": self.T_list,
            "fits": [f.to_dict() for f in self.fits],
            "window_checks": [w.to_dict() for w in self.window_checks],
            "time_average": [r.to_dict() for r in self.time_average],
            "value_average": self.value_average.to_dict(),
        }


def turnpike_study(problem, x0, T_list: Sequence[float],
                   h: Optional[float] = None, delta: float = turnpike.DEFAULT_DELTA,
                   with_integral_ms: bool = False) -> TurnpikeStudy:
    """Run the pipeline for every horizon and certify the envelope, the
    interior window, and the average convergences."""
    reduced = prepare(problem)
    h = riccati.default_step(reduced) if h is None else h
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    T_list = sorted(float(T) for T in T_list)

    are = riccati.solve_are(reduced, h=h)
    static = static_opt.solve_static(reduced, are)

    horizons, means, fits, checks, values, integral_ms = [], [], [], [], [], []
    for T in T_list:
        hs = solve_horizon(reduced, T, h=h, are=are, static=static)
        mean = hs.mean(x0)
        fit = turnpike.fit_envelope(mean.turnpike_deviation(), mean.grid,
                                    T=T, delta=delta)
        horizons.append(hs)
        means.append(mean)
        fits.append(fit)
        checks.append(turnpike.interior_window_check(fit, delta))
        values.append(hs.value(x0))
        if with_integral_ms:
            integral_ms.append(dynamics.integral_second_moment(
                reduced, hs.pt, hs.phi_turnpike, are, static, x0))

    rows = turnpike.time_average_check(means, static,
                                       integral_ms if with_integral_ms else None)
    v_report = turnpike.value_average_check(values, static.V_static, T_list)
    return TurnpikeStudy(x0=x0, T_list=list(T_list), fits=fits,
                         window_checks=checks, time_average=rows,
                         value_average=v_report, means=means, horizons=horizons)
