"""Turnpike certification: exponential envelope fits, interior-window
bounds, and time-average convergence tables.

The certified statement is an envelope

    deviation(t) <= K * (exp(-mu t) + exp(-mu (T - t))),   t in [0, T],

for the summed expected deviations of state, control, and adjoint from
the stationary point, with (K, mu) independent of the horizon.  The
constants are existential in the theory; here they are extracted by a
two-stage log-linear fit and the envelope, the interior-window bound,
and the average convergences are then checked as inequalities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .dynamics import MeanTrajectory
from .static_opt import StaticSolution

__all__ = [
    "TurnpikeFit", "WindowCheck", "TimeAverageRow", "ValueAverageReport",
    "fit_envelope", "interior_window_check", "time_average_check",
    "value_average_check",
]

CLIP = 1e-14            # double-precision floor applied before log fitting
DEFAULT_DELTA = 0.25


@dataclass
class TurnpikeFit:
    """Fitted envelope for one horizon.

    max_violation = max over the grid of deviation - K * envelope; the
    amplitude K is chosen as the (slightly inflated) max ratio, so a
    successful fit always has max_violation <= 0.  interior_bound is the
    measured sup of the deviation over [delta T, (1 - delta) T].
    ``degenerate`` marks an already-at-turnpike run (deviation at the
    clipping floor everywhere; K = 0 by convention); ``low_confidence``
    marks oscillatory log-residuals (poor linear fit) on some side.
    """

    grid: np.ndarray
    deviations: np.ndarray
    T: float
    K: float
    mu: float
    max_violation: float
    interior_bound: float
    delta: float = DEFAULT_DELTA
    left_rate: Optional[float] = None
    right_rate: Optional[float] = None
    degenerate: bool = False
    low_confidence: bool = False

    def envelope(self, t: np.ndarray) -> np.ndarray:
        return self.K * (np.exp(-self.mu * t) + np.exp(-self.mu * (self.T - t)))

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "K": self.K,
            "mu": self.mu,
            "max_violation": self.max_violation,
            "interior_bound": self.interior_bound,
            "delta": self.delta,
            "left_rate": self.left_rate,
            "right_rate": self.right_rate,
            "degenerate": self.degenerate,
            "low_confidence": self.low_confidence,
        }


def _one_sided_rate(tau: np.ndarray, dev: np.ndarray):
    """Fit log(dev) ~ a - rate * tau on the decaying stretch of one
    boundary layer; tau is the distance from that boundary.

    Only the portion where the layer's own exponential dominates is used:
    from the boundary to the running minimum of the log-deviation, with
    clip-floor samples dropped.  Returns (rate, r_squared) or None when
    the side carries no usable decay.
    """
    if len(tau) < 3:
        return None
    logd = np.log(dev)
    stop = int(np.argmin(logd)) + 1
    mask = np.zeros(len(tau), dtype=bool)
    mask[:stop] = True
    mask &= dev > 3.0 * CLIP
    if mask.sum() < 3:
        return None
    t_fit, y_fit = tau[mask], logd[mask]
    if np.ptp(y_fit) < np.log(10.0):        # less than one decade of decay
        return None
    slope, intercept = np.polyfit(t_fit, y_fit, 1)
    if slope >= 0.0:
        return None
    resid = y_fit - (intercept + slope * t_fit)
    total = np.sum((y_fit - y_fit.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / total) if total > 0 else 0.0
    return -float(slope), r2


def fit_envelope(deviations: np.ndarray, grid: np.ndarray,
                 T: Optional[float] = None,
                 delta: float = DEFAULT_DELTA) -> TurnpikeFit:
    """Extract envelope constants (K, mu) from per-time deviations.

    Stage 1 estimates the rate on each boundary layer by least squares on
    the log-deviation over the half-window where that layer dominates
    (values below the clipping floor are dropped, values past the running
    minimum belong to the opposite layer or to round-off and are ignored);
    mu is the smaller of the two slopes so the envelope is valid on both
    ends.  Stage 2 sets K to the maximal ratio of deviation to envelope,
    making the envelope an upper bound by construction.
    """
    deviations = np.asarray(deviations, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if deviations.shape != grid.shape:
        raise ValueError("deviations and grid must have matching shapes")
    T = float(grid[-1]) if T is None else float(T)
    dev = np.maximum(deviations, 0.0)
    clipped = np.maximum(dev, CLIP)

    if np.all(dev <= 10.0 * CLIP):
        # Already at the turnpike; nothing to fit.
        return TurnpikeFit(grid=grid, deviations=dev, T=T, K=0.0, mu=0.0,
                           max_violation=0.0, interior_bound=float(dev.max()),
                           delta=delta, degenerate=True)

    half = grid <= 0.5 * T
    left = _one_sided_rate(grid[half], clipped[half])
    right_sel = grid >= 0.5 * T
    tau_right = (T - grid[right_sel])[::-1]
    dev_right = clipped[right_sel][::-1]
    right = _one_sided_rate(tau_right, dev_right)

    rates = [r for r in (left, right) if r is not None]
    if not rates:
        # No clean exponential on either side; fall back to a symmetric
        # global fit so the caller still gets a valid (if loose) envelope.
        tau = np.minimum(grid, T - grid)
        slope, _ = np.polyfit(tau, np.log(clipped), 1)
        mu = max(-float(slope), 1.0 / max(T, 1.0))
        left_rate = right_rate = None
        low_confidence = True
    else:
        mu = min(r[0] for r in rates)
        left_rate = left[0] if left else None
        right_rate = right[0] if right else None
        low_confidence = any(r[1] < 0.9 for r in rates)

    env = np.exp(-mu * grid) + np.exp(-mu * (T - grid))
    K = float(np.max(dev / env)) * (1.0 + 1e-12)
    violation = float(np.max(dev - K * env))
    window = (grid >= delta * T) & (grid <= (1.0 - delta) * T)
    interior = float(dev[window].max()) if window.any() else 0.0
    return TurnpikeFit(grid=grid, deviations=dev, T=T, K=K, mu=mu,
                       max_violation=violation, interior_bound=interior,
                       delta=delta, left_rate=left_rate, right_rate=right_rate,
                       low_confidence=low_confidence)


@dataclass
class WindowCheck:
    """Interior-window verdict: the measured sup of the deviation over
    [delta T, (1 - delta) T] against the envelope bound 2 K e^{-mu delta T}."""

    passed: bool
    delta: float
    bound: float
    measured_sup: float
    worst_t: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "delta": self.delta,
            "bound": self.bound,
            "measured_sup": self.measured_sup,
            "worst_t": self.worst_t,
        }


def interior_window_check(fit: TurnpikeFit, delta: float) -> WindowCheck:
    """Check deviation(t) <= 2 K exp(-mu delta T) on [delta T, (1-delta) T]."""
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie strictly between 0 and 1/2")
    bound = 2.0 * fit.K * np.exp(-fit.mu * delta * fit.T)
    window = (fit.grid >= delta * fit.T) & (fit.grid <= (1.0 - delta) * fit.T)
    if not window.any():
        return WindowCheck(passed=True, delta=delta, bound=float(bound),
                           measured_sup=0.0)
    dev_win = fit.deviations[window]
    sup = float(dev_win.max())
    worst = float(fit.grid[window][int(np.argmax(dev_win))])
    return WindowCheck(passed=bool(sup <= bound), delta=delta, bound=float(bound),
                       measured_sup=sup, worst_t=worst)


@dataclass
class TimeAverageRow:
    """Average-convergence record for one horizon."""

    T: float
    x_avg_gap: np.ndarray          # (1/T) int E[X] dt - x*
    u_avg_gap: np.ndarray
    x_gap_norm: float
    u_gap_norm: float
    integral_ms_over_T: Optional[float] = None   # (1/T) E|int (X - x*) dt|^2

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "x_avg_gap": self.x_avg_gap.tolist(),
            "u_avg_gap": self.u_avg_gap.tolist(),
            "x_gap_norm": self.x_gap_norm,
            "u_gap_norm": self.u_gap_norm,
            "integral_ms_over_T": self.integral_ms_over_T,
        }


def time_average_check(means: Sequence[MeanTrajectory], static: StaticSolution,
                       integral_ms: Optional[Sequence[float]] = None) -> List[TimeAverageRow]:
    """Tabulate (1/T) int E[state] dt - x* and the control analogue per
    horizon (trapezoid), optionally with the scaled mean-square integral
    deviation (supplied by dynamics.integral_second_moment)."""
    rows = []
    for i, mean in enumerate(means):
        T = mean.horizon
        x_gap = trapezoid(mean.EX, mean.grid, axis=0) / T - static.x_star
        u_gap = trapezoid(mean.Eu, mean.grid, axis=0) / T - static.u_star
        rows.append(TimeAverageRow(
            T=T, x_avg_gap=x_gap, u_avg_gap=u_gap,
            x_gap_norm=float(np.linalg.norm(x_gap)),
            u_gap_norm=float(np.linalg.norm(u_gap)),
            integral_ms_over_T=(None if integral_ms is None
                                else float(integral_ms[i]) / T),
        ))
    return rows


@dataclass
class ValueAverageReport:
    """Convergence of the optimal value per unit time to the stationary
    value; ``passed`` when the error sequence decreases and the final
    error is below a tenth of |V_static| (0.05 absolute at V_static = 0)."""

    T_list: list
    values: list                   # V_T
    averages: list                 # V_T / T
    errors: list                   # |V_T / T - V_static|
    v_static: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "T_list": self.T_list,
            "values": self.values,
            "averages": self.averages,
            "errors": self.errors,
            "v_static": self.v_static,
            "passed": self.passed,
        }


def value_average_check(v_values: Sequence[float], v_static: float,
                        T_list: Sequence[float]) -> ValueAverageReport:
    if len(v_values) != len(T_list):
        raise ValueError("one value per horizon required")
    averages = [v / T for v, T in zip(v_values, T_list)]
    errors = [abs(a - v_static) for a in averages]
    decreasing = all(e2 < e1 for e1, e2 in zip(errors, errors[1:]))
    threshold = 0.1 * abs(v_static) if v_static != 0.0 else 0.05
    passed = decreasing and (errors[-1] < threshold)
    return ValueAverageReport(
        T_list=[float(T) for T in T_list], values=[float(v) for v in v_values],
        averages=[float(a) for a in averages], errors=[float(e) for e in errors],
        v_static=float(v_static), passed=passed,
    )
