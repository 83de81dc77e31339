"""The stationary (static) optimization problem and its naive variant.

The long-run operating point of a reduced instance minimizes

    F(x, u) = <Q x, x> + <R u, u> + 2 <q, x> + <P (Cx + Du + sigma), Cx + Du + sigma>

over the drift-equilibrium set {A x + B u + b = 0}, where P is the
stabilizing stationary Riccati solution.  The diffusion enters the
objective through P, not as a second constraint; the "naive" variant
that instead zeroes the diffusion as a constraint is implemented for
comparison and is frequently infeasible or picks a different point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .model import LQProblem, ReducedLQProblem
from .riccati import AreSolution

__all__ = [
    "StaticSolution", "NaiveStaticSolution", "StaticComparison",
    "solve_static", "solve_naive_static", "static_divergence_report",
]

_NAIVE_FEAS_TOL = 1e-8
_AGREE_TOL = 1e-8


def _static_p(P_or_solution) -> np.ndarray:
    if isinstance(P_or_solution, AreSolution):
        return P_or_solution.P
    return np.atleast_2d(np.asarray(P_or_solution, dtype=float))


@dataclass
class StaticSolution:
    """Minimizer of the stationary problem with its multiplier.

    sigma_star = C x* + D u* + sigma is the residual diffusion at the
    operating point; F_value the objective there and V_static = F_value/2
    the long-run average of the optimal cost per unit time.  The solution
    is produced by a symmetric-indefinite solve of the full saddle system;
    ``cross_check_gap`` is its distance to an independent Schur-complement
    computation of the same point.
    """

    x_star: np.ndarray
    u_star: np.ndarray
    lambda_star: np.ndarray
    sigma_star: np.ndarray
    F_value: float
    V_static: float
    stationarity_residual: float = 0.0
    feasibility_residual: float = 0.0
    cross_check_gap: float = 0.0

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "u_star": self.u_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "sigma_star": self.sigma_star.tolist(),
            "F_value": self.F_value,
            "V_static": self.V_static,
            "stationarity_residual": self.stationarity_residual,
            "feasibility_residual": self.feasibility_residual,
            "cross_check_gap": self.cross_check_gap,
        }


def static_objective(problem: ReducedLQProblem, P: np.ndarray,
                     x: np.ndarray, u: np.ndarray) -> float:
    """F(x, u) for a reduced instance; quadratic and coercive when P > 0."""
    resid = problem.Chat @ x + problem.D @ u + problem.sigmahat
    return float(x @ (problem.Qhat @ x) + u @ (problem.R @ u)
                 + 2.0 * (problem.qhat @ x) + resid @ (P @ resid))


def solve_static(problem: ReducedLQProblem,
                 P: Union[AreSolution, np.ndarray]) -> StaticSolution:
    """Solve the stationary problem via its KKT saddle system.

    The stationarity conditions (the single source of truth here) are

        Q x* + A^T lam* + C^T P (C x* + D u* + sigma) + q = 0,
        R u* + B^T lam* + D^T P (C x* + D u* + sigma)     = 0,
        A x* + B u* + b                                   = 0.

    Requires (A, B) to have full row rank n (guaranteed for stabilizable
    instances); otherwise the problem is irregular and a ValueError is
    raised.  A Schur-complement elimination of (x*, u*) recomputes the
    multiplier independently; the gap between the two routes is reported.
    """
    P = _static_p(P)
    A, B, C, D = problem.Ahat, problem.B, problem.Chat, problem.D
    Q, R, q, b, sig = problem.Qhat, problem.R, problem.qhat, problem.bhat, problem.sigmahat
    n, m = problem.n, problem.m

    AB = np.hstack([A, B])
    if np.linalg.matrix_rank(AB) < n:
        raise ValueError(
            "static problem infeasible/irregular under given data: "
            "(A, B) does not have full row rank"
        )

    PC, PD = P @ C, P @ D
    H = np.block([[Q + C.T @ PC, C.T @ PD],
                  [D.T @ PC, R + D.T @ PD]])
    H = 0.5 * (H + H.T)
    g = np.concatenate([q + C.T @ (P @ sig), D.T @ (P @ sig)])

    saddle = np.zeros((n + m + n, n + m + n))
    saddle[: n + m, : n + m] = H
    saddle[: n + m, n + m:] = AB.T
    saddle[n + m:, : n + m] = AB
    rhs = np.concatenate([-g, -b])
    sol = scipy.linalg.solve(saddle, rhs, assume_a="sym")
    z, lam = sol[: n + m], sol[n + m:]

    # Independent route: eliminate (x, u) with a Cholesky solve of H > 0,
    # then recover the multiplier from the n x n Schur complement.
    chol = scipy.linalg.cho_factor(H, lower=True)
    H_inv_g = scipy.linalg.cho_solve(chol, g)
    H_inv_ABt = scipy.linalg.cho_solve(chol, AB.T)
    schur = AB @ H_inv_ABt
    # Sign bookkeeping differs across textbook displays of the multiplier
    # formula; the saddle solve is authoritative and the stationarity
    # residuals below are the contract both routes must satisfy.
    lam_check = np.linalg.solve(schur, b - AB @ H_inv_g)
    z_check = -H_inv_g - H_inv_ABt @ lam_check
    cross_gap = float(max(np.linalg.norm(z - z_check),
                          np.linalg.norm(lam - lam_check)))

    x_star, u_star = z[:n], z[n:]
    sigma_star = C @ x_star + D @ u_star + sig
    stat1 = Q @ x_star + A.T @ lam + C.T @ (P @ sigma_star) + q
    stat2 = R @ u_star + B.T @ lam + D.T @ (P @ sigma_star)
    feas = A @ x_star + B @ u_star + b

    F_value = static_objective(problem, P, x_star, u_star)
    return StaticSolution(
        x_star=x_star, u_star=u_star, lambda_star=lam, sigma_star=sigma_star,
        F_value=F_value, V_static=0.5 * F_value,
        stationarity_residual=float(max(np.linalg.norm(stat1), np.linalg.norm(stat2))),
        feasibility_residual=float(np.linalg.norm(feas)),
        cross_check_gap=cross_gap,
    )


@dataclass
class NaiveStaticSolution:
    """Outcome of the naive variant with both drift and diffusion zeroed
    as constraints.  Infeasibility is a status, not an error."""

    status: str                      # "feasible" | "infeasible"
    x: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    objective: Optional[float] = None
    constraint_residual: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "x": None if self.x is None else self.x.tolist(),
            "u": None if self.u is None else self.u.tolist(),
            "objective": self.objective,
            "constraint_residual": self.constraint_residual,
        }


def _plain_coeffs(problem):
    if isinstance(problem, ReducedLQProblem):
        return (problem.Ahat, problem.B, problem.Chat, problem.D,
                problem.bhat, problem.sigmahat, problem.Qhat,
                np.zeros((problem.m, problem.n)), problem.R,
                problem.qhat, np.zeros(problem.m))
    return (problem.A, problem.B, problem.C, problem.D, problem.b,
            problem.sigma, problem.Q, problem.S, problem.R, problem.q,
            problem.r)


def solve_naive_static(problem: Union[LQProblem, ReducedLQProblem]) -> NaiveStaticSolution:
    """Minimize the noise-free objective subject to both the drift and the
    diffusion vanishing.

    The stacked 2n x (n+m) system may be infeasible (the two constraint
    sets can contradict each other) or rank deficient (duplicated rows);
    feasibility is decided by the least-squares residual and the quadratic
    is then minimized over the affine solution set through a null-space
    parametrization.
    """
    A, B, C, D, b, sig, Q, S, R, q, r = _plain_coeffs(problem)
    n, m = B.shape

    G = np.block([[A, B], [C, D]])
    rhs = -np.concatenate([b, sig])
    z0, *_ = np.linalg.lstsq(G, rhs, rcond=None)
    residual = float(np.linalg.norm(G @ z0 - rhs))
    if residual > _NAIVE_FEAS_TOL * max(1.0, float(np.linalg.norm(rhs))):
        return NaiveStaticSolution(status="infeasible", constraint_residual=residual)

    H0 = np.block([[Q, S.T], [S, R]])
    H0 = 0.5 * (H0 + H0.T)
    c0 = np.concatenate([q, r])
    null = scipy.linalg.null_space(G)
    z = z0
    if null.shape[1] > 0:
        w = np.linalg.solve(null.T @ H0 @ null, -null.T @ (H0 @ z0 + c0))
        z = z0 + null @ w
    x, u = z[:n], z[n:]
    objective = float(z @ (H0 @ z) + 2.0 * (c0 @ z))
    return NaiveStaticSolution(status="feasible", x=x, u=u,
                               objective=objective, constraint_residual=residual)


@dataclass
class StaticComparison:
    """Side-by-side record of the correct and the naive stationary points."""

    static: StaticSolution
    naive: NaiveStaticSolution
    agrees: Optional[bool]           # None when the naive problem is infeasible
    max_gap: Optional[float]

    def to_dict(self) -> dict:
        return {
            "static": self.static.to_dict(),
            "naive": self.naive.to_dict(),
            "agrees": self.agrees,
            "max_gap": self.max_gap,
        }


def static_divergence_report(problem: ReducedLQProblem,
                             P: Union[AreSolution, np.ndarray]) -> StaticComparison:
    """Run both stationary solvers and report whether they coincide."""
    static = solve_static(problem, P)
    naive = solve_naive_static(problem)
    if not naive.feasible:
        return StaticComparison(static=static, naive=naive, agrees=None, max_gap=None)
    gap = float(max(np.linalg.norm(static.x_star - naive.x),
                    np.linalg.norm(static.u_star - naive.u)))
    return StaticComparison(static=static, naive=naive,
                            agrees=gap <= _AGREE_TOL, max_gap=gap)
