"""Riccati machinery: monotone forward flow, finite-horizon solution,
stationary equation, gain schedules, and offset ODEs.

Everything here operates on a reduced problem (no cross weight, no
linear control cost).  The central object is the forward matrix flow

    Sigma' = lyapunov_term(Sigma) - cross^T weight^{-1} cross,  Sigma(0) = 0,

whose value at T - t equals the finite-horizon Riccati solution P_T(t)
with P_T(T) = 0, and whose t -> infinity limit is the stabilizing
solution P of the stationary equation.  The flow is monotone
(0 < Sigma(s) <= Sigma(t) <= P) and converges exponentially, which
measure_decay_rate quantifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._integrate import (FlowDivergence, affine_rk4_backward_maps,
                         hermite_midpoints, plan_grid, rk4_autonomous,
                         rk4_backward, scan_backward)
from .model import ReducedLQProblem
from .stability import is_ms_stable, ms_generator

__all__ = [
    "GainMaps", "MatrixTrajectory", "VectorTrajectory", "AreSolution",
    "DecayRateFit", "ConvergenceBudgetError", "FlowDivergence",
    "default_step", "sigma_flow", "solve_are", "finite_horizon_riccati",
    "backward_riccati", "gain_schedule", "phi_value_ode",
    "phi_turnpike_ode", "measure_decay_rate",
]

ARE_TOL_SCALE = 1e-10     # stationary residual tolerance, times (1 + ||Q||)
DIVERGENCE_CAP_SCALE = 1e8


class ConvergenceBudgetError(RuntimeError):
    """Time budget exhausted with neither a stalled flow nor divergence."""


class GainMaps:
    """Pure maps of a symmetric matrix P under one reduced problem.

    lyapunov_term(P) = P A + A^T P + C^T P C + Q
    cross_term(P)    = B^T P + D^T P C
    control_weight(P)= R + D^T P D            (positive definite for P >= 0)
    feedback_gain(P) = -control_weight(P)^{-1} cross_term(P)
    flow_rhs(P)      = lyapunov_term - cross^T weight^{-1} cross

    flow_rhs doubles as the stationary-equation residual.
    """

    def __init__(self, problem: ReducedLQProblem):
        self.problem = problem
        self.A = problem.Ahat
        self.B = problem.B
        self.C = problem.Chat
        self.D = problem.D
        self.Q = problem.Qhat
        self.R = problem.R
        self._BT = self.B.T.copy()
        self._CT = self.C.T.copy()
        self._DT = self.D.T.copy()

    def lyapunov_term(self, P: np.ndarray) -> np.ndarray:
        PA = P @ self.A
        return PA + PA.T + self._CT @ (P @ self.C) + self.Q

    def cross_term(self, P: np.ndarray) -> np.ndarray:
        return self._BT @ P + self._DT @ (P @ self.C)

    def control_weight(self, P: np.ndarray) -> np.ndarray:
        return self.R + self._DT @ (P @ self.D)

    def _weight_solve(self, P: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        try:
            return cho_solve(cho_factor(self.control_weight(P), lower=True), rhs)
        except np.linalg.LinAlgError as err:  # pragma: no cover - guarded path
            raise RuntimeError(
                "control weight lost positive definiteness; this cannot happen "
                "for P >= 0 under a validated problem"
            ) from err

    def feedback_gain(self, P: np.ndarray) -> np.ndarray:
        return -self._weight_solve(P, self.cross_term(P))

    def flow_rhs(self, P: np.ndarray) -> np.ndarray:
        PA = P @ self.A
        PC = P @ self.C
        cross = self._BT @ P + self._DT @ PC
        weight = self.R + self._DT @ (P @ self.D)
        try:
            sol = cho_solve(cho_factor(weight, lower=True), cross)
        except np.linalg.LinAlgError as err:  # pragma: no cover - guarded path
            raise RuntimeError(
                "control weight lost positive definiteness; this cannot happen "
                "for P >= 0 under a validated problem"
            ) from err
        out = PA + PA.T + self._CT @ PC + self.Q - cross.T @ sol
        return 0.5 * (out + out.T)

    def batched_gains(self, P_stack: np.ndarray) -> np.ndarray:
        """feedback_gain applied across a stack of symmetric matrices."""
        weight = self.R + np.einsum("ji,tjk,kl->til", self.D, P_stack, self.D)
        cross = (np.einsum("ji,tjk->tik", self.B, P_stack)
                 + np.einsum("ji,tjk,kl->til", self.D, P_stack, self.C))
        return -np.linalg.solve(weight, cross)

    def residual_norm(self, P: np.ndarray) -> float:
        return float(np.linalg.norm(self.flow_rhs(P)))

    def closed_loop(self, P: np.ndarray):
        """(A + B K, C + D K, K) for K = feedback_gain(P)."""
        K = self.feedback_gain(P)
        return self.A + self.B @ K, self.C + self.D @ K, K

    def closed_loop_residual(self, P: np.ndarray) -> float:
        """Norm of P Acl + Acl^T P + Ccl^T P Ccl + Q + K^T R K, the
        rearranged form of the stationary equation (zero at the solution)."""
        Acl, Ccl, K = self.closed_loop(P)
        PA = P @ Acl
        res = PA + PA.T + Ccl.T @ (P @ Ccl) + self.Q + K.T @ (self.R @ K)
        return float(np.linalg.norm(res))


@dataclass
class MatrixTrajectory:
    """Matrix path sampled on a uniform grid, with cell midpoints kept so
    downstream RK4 stages see coefficients at full accuracy."""

    grid: np.ndarray
    values: np.ndarray            # (len(grid), p, q)
    mids: np.ndarray              # (len(grid) - 1, p, q)
    step: float

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_cells(self) -> int:
        return len(self.grid) - 1

    def reversed(self) -> "MatrixTrajectory":
        """Path t -> value(T - t) on the same grid."""
        return MatrixTrajectory(self.grid.copy(), self.values[::-1].copy(),
                                self.mids[::-1].copy(), self.step)

    def stage(self, cell: int, stage: int) -> np.ndarray:
        if stage == 1:
            return self.mids[cell]
        return self.values[cell + (stage >> 1)]


@dataclass
class VectorTrajectory:
    """Vector path on a uniform grid with cell midpoints; ``terminal``
    records the imposed terminal value (exactly reproduced at grid[-1])."""

    grid: np.ndarray
    values: np.ndarray            # (len(grid), p)
    mids: np.ndarray              # (len(grid) - 1, p)
    step: float
    terminal: np.ndarray = None

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def stage(self, cell: int, stage: int) -> np.ndarray:
        if stage == 1:
            return self.mids[cell]
        return self.values[cell + (stage >> 1)]


def same_grid(a, b) -> bool:
    return len(a.grid) == len(b.grid) and np.array_equal(a.grid, b.grid)


def require_same_grid(a, b, what: str) -> None:
    if not same_grid(a, b):
        raise ValueError(f"grid mismatch: {what} must share one uniform grid")


def default_step(problem: ReducedLQProblem) -> float:
    """Desk-scale default RK4 step: 1e-3 scaled up for slow drift, capped
    at 1e-2 so a tiny ||A|| (the flow may still be fast through Q, R)
    cannot stretch the step past reason."""
    norm_a = float(np.linalg.norm(problem.Ahat))
    if norm_a == 0.0:
        return 1e-3
    return min(1e-2, 1e-3 * max(1.0, 1.0 / norm_a))


def _divergence_cap(problem: ReducedLQProblem) -> float:
    return DIVERGENCE_CAP_SCALE * (1.0 + float(np.linalg.norm(problem.Qhat)))


def sigma_flow(problem: ReducedLQProblem, T: float, h: float = None) -> MatrixTrajectory:
    """Integrate the forward flow from Sigma(0) = 0 on [0, T].

    Classical RK4 with a fixed step (h is rounded so it divides T), the
    iterate re-symmetrized every step.  The control weight stays positive
    definite along the way since Sigma >= 0 and R > 0.  A norm blow-up
    past the divergence cap raises FlowDivergence carrying the blow-up
    time.
    """
    h = default_step(problem) if h is None else h
    gm = GainMaps(problem)
    grid, h_eff, n_cells = plan_grid(T, h)
    values, derivs = rk4_autonomous(
        gm.flow_rhs, np.zeros((problem.n, problem.n)), n_cells, h_eff,
        norm_cap=_divergence_cap(problem),
    )
    mids = hermite_midpoints(values, derivs, h_eff)
    return MatrixTrajectory(grid, values, mids, h_eff)


@dataclass
class AreSolution:
    """Stabilizing solution of the stationary Riccati equation.

    residual is the stationary-equation residual norm; theta the feedback
    gain; closed_loop_abscissa the mean-square generator abscissa of
    [A + B theta, C + D theta] (negative for a stabilizing solution).
    ``refined`` records whether Newton polishing reached the target
    residual or the flow limit was returned as-is.
    """

    P: np.ndarray
    theta: np.ndarray
    residual: float
    iterations: int
    closed_loop_abscissa: float
    refined: bool = True
    flow_time: float = 0.0
    sigma: Optional[MatrixTrajectory] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "theta": self.theta.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "closed_loop_abscissa": self.closed_loop_abscissa,
            "refined": self.refined,
            "flow_time": self.flow_time,
        }


def _newton_kleinman(gm: GainMaps, P0: np.ndarray, tol_are: float, max_iter: int):
    """Polish a near-stationary P by Kleinman iteration: at each step solve
    the closed-loop Lyapunov-type linear system about the current gain.

        P_next (A+BK) + (A+BK)^T P_next + (C+DK)^T P_next (C+DK)
            = -(Q + K^T R K),   K = feedback_gain(P_current).
    """
    n = P0.shape[0]
    P = P0.copy()
    best = (gm.residual_norm(P), P, 0)
    for it in range(1, max_iter + 1):
        Acl, Ccl, K = gm.closed_loop(P)
        rhs = -(gm.Q + K.T @ (gm.R @ K))
        G = ms_generator(Acl, Ccl)
        try:
            vec_p = np.linalg.solve(G.T, rhs.reshape(-1, order="F"))
        except np.linalg.LinAlgError:
            break
        P = vec_p.reshape((n, n), order="F")
        P = 0.5 * (P + P.T)
        res = gm.residual_norm(P)
        if res < best[0]:
            best = (res, P, it)
        if res <= tol_are:
            return P, res, it, True
        if it > 2 and res > 10.0 * best[0]:
            break
    res, P, it = best
    return P, res, it, res <= tol_are


def solve_are(problem: ReducedLQProblem, h: float = None, tol: float = 1e-9,
              t_max: float = 400.0, newton_max: int = 50) -> AreSolution:
    """Stationary Riccati solve: monotone flow to near-convergence, then
    Newton polishing for the last digits.

    The flow is integrated in unit-time windows until two window ends one
    time unit apart differ by less than ``tol`` in Frobenius norm.  Flow
    divergence past the cap raises FlowDivergence (the instance is then
    not stabilizable); exhausting ``t_max`` without stall or divergence
    raises ConvergenceBudgetError (indeterminate; never a silent result).
    Newton stagnation is not an error: the flow limit is returned flagged
    ``refined=False`` with its residual.
    """
    h = default_step(problem) if h is None else h
    gm = GainMaps(problem)
    cap = _divergence_cap(problem)
    window = max(1, int(round(1.0 / h)))
    h_eff = 1.0 / window

    all_values = [np.zeros((problem.n, problem.n))[None]]
    all_derivs = [gm.flow_rhs(all_values[0][0])[None]]
    previous = all_values[0][0]
    stalled = False
    elapsed = 0.0
    while elapsed < t_max:
        try:
            values, derivs = rk4_autonomous(gm.flow_rhs, previous, window,
                                            h_eff, norm_cap=cap)
        except FlowDivergence as err:
            raise FlowDivergence(elapsed + err.blow_up_time) from None
        all_values.append(values[1:])
        all_derivs.append(derivs[1:])
        elapsed += 1.0
        if np.linalg.norm(values[-1] - previous) < tol:
            previous = values[-1]
            stalled = True
            break
        previous = values[-1]
    if not stalled:
        raise ConvergenceBudgetError(
            f"flow neither stalled nor diverged within t_max = {t_max:g}"
        )

    values = np.concatenate(all_values, axis=0)
    derivs = np.concatenate(all_derivs, axis=0)
    grid = np.linspace(0.0, elapsed, len(values))
    sigma = MatrixTrajectory(grid, values, hermite_midpoints(values, derivs, h_eff), h_eff)

    tol_are = ARE_TOL_SCALE * (1.0 + float(np.linalg.norm(problem.Qhat)))
    P, residual, iterations, refined = _newton_kleinman(gm, previous, tol_are, newton_max)
    if np.linalg.eigvalsh(P)[0] <= 0.0 or (not refined and residual > gm.residual_norm(previous)):
        # Newton left the cone; fall back to the flow limit.
        P, residual, iterations, refined = previous, gm.residual_norm(previous), 0, False

    Acl, Ccl, K = gm.closed_loop(P)
    closed = is_ms_stable(Acl, Ccl)
    if not closed.stable:
        raise RuntimeError(
            "stationary solve converged to a non-stabilizing matrix; "
            f"closed-loop abscissa {closed.generator_abscissa:.6g}"
        )
    return AreSolution(P=P, theta=K, residual=residual, iterations=iterations,
                       closed_loop_abscissa=closed.generator_abscissa,
                       refined=refined, flow_time=elapsed, sigma=sigma)


def finite_horizon_riccati(problem: ReducedLQProblem, T: float,
                           h: float = None) -> MatrixTrajectory:
    """Finite-horizon Riccati solution P_T on [0, T] with P_T(T) = 0,
    obtained by time reversal of a single forward-flow integration:
    P_T(t) = Sigma(T - t)."""
    return sigma_flow(problem, T, h).reversed()


def backward_riccati(problem: ReducedLQProblem, T: float,
                     h: float = None) -> MatrixTrajectory:
    """Direct backward RK4 integration of the finite-horizon equation
    P' = -flow_rhs(P), P(T) = 0.  Exists as an independent cross-check of
    finite_horizon_riccati; the two agree to integrator accuracy."""
    h = default_step(problem) if h is None else h
    gm = GainMaps(problem)
    grid, h_eff, n_cells = plan_grid(T, h)
    cap = _divergence_cap(problem)

    def rhs(cell, stage, P):
        out = -gm.flow_rhs(P)
        if not np.linalg.norm(P) <= cap:
            raise FlowDivergence(grid[cell])
        return out

    values, derivs = rk4_backward(rhs, np.zeros((problem.n, problem.n)), n_cells, h_eff)
    values = 0.5 * (values + np.swapaxes(values, 1, 2))
    mids = hermite_midpoints(values, derivs, h_eff)
    return MatrixTrajectory(grid, values, mids, h_eff)


def gain_schedule(problem: ReducedLQProblem, pt: MatrixTrajectory) -> MatrixTrajectory:
    """Feedback-gain path K(P_T(t)) on the grid of ``pt`` (with midpoints).
    At t = T the gain is exactly zero because P_T(T) = 0 and the reduced
    problem has no cross weight."""
    gm = GainMaps(problem)
    return MatrixTrajectory(pt.grid.copy(), gm.batched_gains(pt.values),
                            gm.batched_gains(pt.mids), pt.step)


def _closed_loop_stack(problem: ReducedLQProblem, P_stack, K_stack):
    Acl = problem.Ahat + np.einsum("ij,tjk->tik", problem.B, K_stack)
    Ccl = problem.Chat + np.einsum("ij,tjk->tik", problem.D, K_stack)
    return Acl, Ccl


def _backward_affine_path(pt: MatrixTrajectory, F_nodes, F_mids, c_nodes,
                          c_mids, terminal: np.ndarray) -> VectorTrajectory:
    Phi, psi = affine_rk4_backward_maps(F_nodes, F_mids, c_nodes, c_mids, pt.step)
    values = scan_backward(Phi, psi, terminal)
    derivs = np.einsum("tij,tj->ti", F_nodes, values) + c_nodes
    mids = hermite_midpoints(values, derivs, pt.step)
    return VectorTrajectory(pt.grid.copy(), values, mids, pt.step,
                            terminal=np.asarray(terminal, dtype=float))


def phi_value_ode(problem: ReducedLQProblem, pt: MatrixTrajectory,
                  gains: MatrixTrajectory = None) -> VectorTrajectory:
    """Backward offset ODE entering the value function and the affine part
    of the optimal feedback (terminal value zero):

        phi' = -(A + B K_T)^T phi - (C + D K_T)^T P_T sigma - P_T b - q.
    """
    gains = gain_schedule(problem, pt) if gains is None else gains
    require_same_grid(pt, gains, "Riccati path and gain schedule")
    b, sig, q = problem.bhat, problem.sigmahat, problem.qhat

    def pieces(P_stack, K_stack):
        Acl, Ccl = _closed_loop_stack(problem, P_stack, K_stack)
        F = -np.swapaxes(Acl, 1, 2)
        Psig = np.einsum("tij,j->ti", P_stack, sig)
        c = (-np.einsum("tji,tj->ti", Ccl, Psig)
             - np.einsum("tij,j->ti", P_stack, b) - q)
        return F, c

    F_nodes, c_nodes = pieces(pt.values, gains.values)
    F_mids, c_mids = pieces(pt.mids, gains.mids)
    return _backward_affine_path(pt, F_nodes, F_mids, c_nodes, c_mids,
                                 np.zeros(problem.n))


def phi_turnpike_ode(problem: ReducedLQProblem, pt: MatrixTrajectory,
                     P: np.ndarray, lambda_star: np.ndarray,
                     sigma_star: np.ndarray,
                     gains: MatrixTrajectory = None) -> VectorTrajectory:
    """Backward offset ODE of the deviation feedback, driven by the gap
    P_T(t) - P and ending at minus the stationary multiplier:

        phi' = -(A + B K_T)^T phi - (C + D K_T)^T (P_T - P) sigma_star,
        phi(T) = -lambda_star.
    """
    gains = gain_schedule(problem, pt) if gains is None else gains
    require_same_grid(pt, gains, "Riccati path and gain schedule")
    lambda_star = np.asarray(lambda_star, dtype=float)
    sigma_star = np.asarray(sigma_star, dtype=float)

    def pieces(P_stack, K_stack):
        Acl, Ccl = _closed_loop_stack(problem, P_stack, K_stack)
        F = -np.swapaxes(Acl, 1, 2)
        gap_sig = np.einsum("tij,j->ti", P_stack - P, sigma_star)
        c = -np.einsum("tji,tj->ti", Ccl, gap_sig)
        return F, c

    F_nodes, c_nodes = pieces(pt.values, gains.values)
    F_mids, c_mids = pieces(pt.mids, gains.mids)
    return _backward_affine_path(pt, F_nodes, F_mids, c_nodes, c_mids,
                                 -lambda_star)


@dataclass
class DecayRateFit:
    """Least-squares fit of log ||P - Sigma(t)|| over the window where the
    residual sits between 1e-2 and 1e-9 of its initial value."""

    amplitude: float              # fitted K in K * exp(-rate * t)
    rate: float
    window: tuple
    n_points: int


def measure_decay_rate(sigma: MatrixTrajectory, P: np.ndarray) -> DecayRateFit:
    """Measure the exponential approach of the flow to its limit P.

    Raises ValueError when the usable window is empty (convergence too
    fast or too slow for the grid): re-run with a different horizon/step.
    """
    res = np.linalg.norm(P - sigma.values, axis=(1, 2))
    r0 = res[0]
    if r0 == 0.0:
        raise ValueError("flow starts at the limit; nothing to fit")
    mask = (res >= 1e-9 * r0) & (res <= 1e-2 * r0)
    if int(mask.sum()) < 2:
        raise ValueError(
            "decay window is empty (converged too fast or too slow); "
            "change the horizon or the step"
        )
    t = sigma.grid[mask]
    y = np.log(res[mask])
    slope, intercept = np.polyfit(t, y, 1)
    return DecayRateFit(amplitude=float(np.exp(intercept)), rate=float(-slope),
                        window=(float(t[0]), float(t[-1])), n_points=int(mask.sum()))
