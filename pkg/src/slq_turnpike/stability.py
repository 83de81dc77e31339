"""Mean-square stability and stabilizability tests.

For the homogeneous SDE dX = A X dt + C X dW, the second moment
M(t) = E[X X^T] obeys the linear flow dM/dt = A M + M A^T + C M C^T.
Stacking M column-major turns the flow into an n^2-dimensional linear
system whose matrix we call the mean-square generator; its spectral
abscissa decides exponential mean-square stability.  Equivalently, the
system is stable iff some P > 0 satisfies P A + A^T P + C^T P C < 0,
which is the certificate this module attaches when it exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._integrate import FlowDivergence, plan_grid, rk4_autonomous

# Calibration grid for the amplitude constant: step 0.01 out to 10 decay
# half-lives-ish (t = 10 / rate), capped at 2000 nodes so slowly decaying
# systems stay desk-scale.
_CAL_STEP = 0.01
_CAL_SPAN = 10.0
_CAL_MAX_NODES = 2000


def _calibration_grid(rate: float):
    t_end = _CAL_SPAN / rate
    step = max(_CAL_STEP, t_end / _CAL_MAX_NODES)
    return t_end, min(step, t_end / 10)


def _square_pair(A, C):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if A.shape[0] != A.shape[1] or C.shape != A.shape:
        raise ValueError(f"A and C must be square and equal-size, got {A.shape} and {C.shape}")
    return A, C


def ms_generator(A, C) -> np.ndarray:
    """Matrix of the second-moment flow acting on column-major vec(M).

    With vec stacking columns,  vec(A M + M A^T + C M C^T) =
    (I (x) A + A (x) I + C (x) C) vec(M);  the Kronecker ordering below is
    tied to that column-major convention.
    """
    A, C = _square_pair(A, C)
    eye = np.eye(A.shape[0])
    return np.kron(eye, A) + np.kron(A, eye) + np.kron(C, C)


@dataclass
class StabilityReport:
    """Verdict and certificates for one [A, C] pair.

    beta/alpha give the calibrated envelope  E|Phi(t)|^2 <= alpha e^{-beta t}
    of the fundamental solution on the calibration grid (valid iff stable);
    the Lyapunov witness P, when present, satisfies
    P A + A^T P + C^T P C = -I up to ``witness_residual`` and P > 0.
    """

    generator_abscissa: float
    stable: bool
    beta: Optional[float] = None
    alpha: Optional[float] = None
    lyapunov_witness: Optional[np.ndarray] = None
    witness_residual: Optional[float] = None
    flag: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "generator_abscissa": self.generator_abscissa,
            "stable": self.stable,
            "beta": self.beta,
            "alpha": self.alpha,
            "lyapunov_witness": None if self.lyapunov_witness is None
            else self.lyapunov_witness.tolist(),
            "witness_residual": self.witness_residual,
            "flag": self.flag,
        }


def second_moment_flow(A, C, M0=None, T: float = 1.0, h: float = _CAL_STEP):
    """Integrate dM/dt = A M + M A^T + C M C^T from M0 (default I).

    Returns (grid, values); the trace of the values is E|Phi(t)|^2 when
    M0 = I.  Plain RK4, small and deterministic.
    """
    A, C = _square_pair(A, C)
    M0 = np.eye(A.shape[0]) if M0 is None else np.asarray(M0, dtype=float)
    grid, h_eff, n_cells = plan_grid(T, h)

    def f(M):
        return A @ M + M @ A.T + C @ M @ C.T

    values, _ = rk4_autonomous(f, M0, n_cells, h_eff)
    return grid, values


def _lyapunov_witness(A, C):
    """Solve P A + A^T P + C^T P C = -I; returns (P, residual) or (None, None)."""
    n = A.shape[0]
    G = ms_generator(A, C)
    try:
        vec_p = np.linalg.solve(G.T, -np.eye(n).reshape(-1, order="F"))
    except np.linalg.LinAlgError:
        return None, None
    P = vec_p.reshape((n, n), order="F")
    P = 0.5 * (P + P.T)
    residual = float(np.linalg.norm(P @ A + A.T @ P + C.T @ P @ C + np.eye(n)))
    return P, residual


def is_ms_stable(A, C) -> StabilityReport:
    """Mean-square exponential stability test for [A, C].

    The verdict comes from the generator abscissa; when stable, the decay
    rate beta equals minus the abscissa and alpha is the tightest constant
    with E|Phi(t)|^2 <= alpha e^{-beta t} on the calibration grid.  The
    Lyapunov witness is attached whenever the linear solve yields P > 0,
    which happens exactly in the stable case.
    """
    A, C = _square_pair(A, C)
    G = ms_generator(A, C)
    abscissa = float(np.max(np.linalg.eigvals(G).real))
    report = StabilityReport(generator_abscissa=abscissa, stable=abscissa < 0.0)

    P, residual = _lyapunov_witness(A, C)
    if P is None:
        report.flag = "witness solve failed (singular generator system)"
    elif np.linalg.eigvalsh(P)[0] > 0.0:
        report.lyapunov_witness = P
        report.witness_residual = residual

    if report.stable:
        report.beta = -abscissa
        t_end, step = _calibration_grid(report.beta)
        grid, values = second_moment_flow(A, C, T=t_end, h=step)
        traces = np.einsum("tii->t", values)
        report.alpha = float(np.max(traces * np.exp(report.beta * grid)))
    return report


@dataclass
class StabilizabilityResult:
    """Outcome of the constructive stabilizability probe.

    ``stabilizable`` is True/False when the probe reached a verdict and
    None when the iteration budget ran out without either convergence or
    divergence (indeterminate; never silently False).
    """

    stabilizable: Optional[bool]
    theta: Optional[np.ndarray] = None
    closed_loop_abscissa: Optional[float] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "stabilizable": self.stabilizable,
            "theta": None if self.theta is None else self.theta.tolist(),
            "closed_loop_abscissa": self.closed_loop_abscissa,
            "detail": self.detail,
        }


def is_stabilizable(problem_or_mats, h: float = None,
                    t_max: float = 200.0) -> StabilizabilityResult:
    """Probe whether some constant gain makes [A+B Th, C+D Th] stable.

    Constructive: synthesize the gain from the stationary Riccati solver
    with the surrogate weights Q = I, R = I (any strongly standard choice
    certifies stabilizability when its monotone flow converges).  Flow
    divergence past the cap certifies the negative verdict; running out
    of ``t_max`` with neither stall nor divergence is indeterminate.
    """
    from . import riccati
    from .model import LQProblem, ReducedLQProblem

    if isinstance(problem_or_mats, ReducedLQProblem):
        A, B, C, D = (problem_or_mats.Ahat, problem_or_mats.B,
                      problem_or_mats.Chat, problem_or_mats.D)
    elif isinstance(problem_or_mats, LQProblem):
        A, B, C, D = (problem_or_mats.A, problem_or_mats.B,
                      problem_or_mats.C, problem_or_mats.D)
    else:
        A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float))
                      for M in problem_or_mats)
    n, m = B.shape

    surrogate = ReducedLQProblem(
        n=n, m=m, Ahat=A, B=B, Chat=C, D=D,
        bhat=np.zeros(n), sigmahat=np.zeros(n),
        Qhat=np.eye(n), R=np.eye(m), qhat=np.zeros(n), phi0=0.0,
    )
    try:
        sol = riccati.solve_are(surrogate, h=h, t_max=t_max)
    except FlowDivergence as err:
        return StabilizabilityResult(
            stabilizable=False,
            detail=f"moment-flow divergence at t = {err.blow_up_time:.6g}",
        )
    except riccati.ConvergenceBudgetError as err:
        return StabilizabilityResult(stabilizable=None, detail=str(err))

    closed = is_ms_stable(A + B @ sol.theta, C + D @ sol.theta)
    if not closed.stable:
        # Synthesized gain failed verification; do not report a silent False.
        return StabilizabilityResult(
            stabilizable=None,
            theta=sol.theta,
            closed_loop_abscissa=closed.generator_abscissa,
            detail="surrogate synthesis converged but the gain failed the stability check",
        )
    return StabilizabilityResult(
        stabilizable=True,
        theta=sol.theta,
        closed_loop_abscissa=closed.generator_abscissa,
        detail="gain synthesized from surrogate stationary solve",
    )


def matrix_exponential_decay(A, C=None) -> tuple:
    """Envelope |e^{A t}| <= alpha_half * e^{-beta_half t} on a sampled grid.

    The mean of the fundamental solution of [A, C] is e^{A t}, so half the
    mean-square decay rate of any stable companion pair bounds the matrix
    exponential.  With C omitted the pure pair [A, 0] is used (beta is then
    twice the spectral abscissa magnitude); passing the diffusion of a
    stable closed loop reproduces the in-context constant instead.
    alpha_half is calibrated as the tightest grid-consistent amplitude.
    """
    from scipy.linalg import expm

    A, _ = _square_pair(A, A * 0.0)
    spec_abscissa = float(np.max(np.linalg.eigvals(A).real))
    if not spec_abscissa < 0.0:
        raise ValueError(f"matrix is not Hurwitz (spectral abscissa {spec_abscissa:.6g})")

    C = np.zeros_like(A) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    report = is_ms_stable(A, C)
    if not report.stable:
        raise ValueError("companion pair [A, C] is not mean-square stable")
    beta_half = 0.5 * report.beta
    t_end, h = _calibration_grid(beta_half)
    grid, h_eff, n_cells = plan_grid(t_end, h)
    step = expm(A * h_eff)
    phi = np.eye(A.shape[0])
    ratio = np.empty(n_cells + 1)
    for i, t in enumerate(grid):
        ratio[i] = np.linalg.norm(phi) * np.exp(beta_half * t)
        phi = step @ phi
    return float(np.max(ratio)), beta_half
