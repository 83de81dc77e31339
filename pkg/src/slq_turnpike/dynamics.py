"""Closed-loop propagation: mean and second-moment ODEs, the finite-horizon
value, and an Euler-Maruyama Monte Carlo oracle.

Expectation trajectories are exact in the model (linear SDE, affine
feedback), so the deterministic moment route is primary and the Monte
Carlo simulator plays the role of an independent stochastic oracle:
sample means must agree with the moment ODEs to statistical accuracy,
and sample costs with the value function.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.integrate import trapezoid

from ._integrate import affine_rk4_forward_maps, scan_forward
from .model import LQProblem, ReducedLQProblem
from .riccati import (AreSolution, MatrixTrajectory, VectorTrajectory,
                      gain_schedule, require_same_grid)
from .static_opt import StaticSolution

__all__ = [
    "MeanTrajectory", "MomentTrajectory", "McEnsemble",
    "mean_flow", "moment_flow", "value_function", "simulate_mc",
    "optimal_control_offset", "integral_second_moment", "feedback_cost",
]

_COV_TOL = 1e-8


# ---------------------------------------------------------------------------
# closed-loop coefficient paths


@dataclass
class _ClosedLoopPath:
    """Batched stage coefficients of the optimal closed loop in deviation
    coordinates: dXhat = (Acl Xhat + beta) dt + (Ccl Xhat + gamma) dW."""

    Acl_n: np.ndarray
    Acl_m: np.ndarray
    Ccl_n: np.ndarray
    Ccl_m: np.ndarray
    K_n: np.ndarray
    K_m: np.ndarray
    vhat_n: np.ndarray
    vhat_m: np.ndarray
    beta_n: np.ndarray
    beta_m: np.ndarray
    gamma_n: np.ndarray
    gamma_m: np.ndarray


def _affine_parts(problem, P_stack, phi_stack, P_inf, sigma_star):
    """vhat = -weight(P_T)^{-1} (B^T phi + D^T (P_T - P) sigma_star) plus the
    deviation-system forcings beta = B vhat and gamma = D vhat + sigma_star."""
    B, D = problem.B, problem.D
    weight = problem.R + np.einsum("ji,tjk,kl->til", D, P_stack, D)
    rhs = (np.einsum("ji,tj->ti", B, phi_stack)
           + np.einsum("ji,tjk,k->ti", D, P_stack - P_inf, sigma_star))
    vhat = -np.linalg.solve(weight, rhs[..., None])[..., 0]
    beta = np.einsum("ij,tj->ti", B, vhat)
    gamma = np.einsum("ij,tj->ti", D, vhat) + sigma_star
    return vhat, beta, gamma


def _closed_loop_path(problem: ReducedLQProblem, pt: MatrixTrajectory,
                      phi_tp: VectorTrajectory, are: AreSolution,
                      static: StaticSolution,
                      gains: MatrixTrajectory = None) -> _ClosedLoopPath:
    require_same_grid(pt, phi_tp, "Riccati path and turnpike offset")
    gains = gain_schedule(problem, pt) if gains is None else gains
    require_same_grid(pt, gains, "Riccati path and gain schedule")
    B, D = problem.B, problem.D

    Acl_n = problem.Ahat + np.einsum("ij,tjk->tik", B, gains.values)
    Acl_m = problem.Ahat + np.einsum("ij,tjk->tik", B, gains.mids)
    Ccl_n = problem.Chat + np.einsum("ij,tjk->tik", D, gains.values)
    Ccl_m = problem.Chat + np.einsum("ij,tjk->tik", D, gains.mids)
    vhat_n, beta_n, gamma_n = _affine_parts(problem, pt.values, phi_tp.values,
                                            are.P, static.sigma_star)
    vhat_m, beta_m, gamma_m = _affine_parts(problem, pt.mids, phi_tp.mids,
                                            are.P, static.sigma_star)
    return _ClosedLoopPath(Acl_n, Acl_m, Ccl_n, Ccl_m,
                           gains.values, gains.mids, vhat_n, vhat_m,
                           beta_n, beta_m, gamma_n, gamma_m)


# ---------------------------------------------------------------------------
# mean flow


@dataclass
class MeanTrajectory:
    """Expected optimal state/control/adjoint paths.

    EX, Eu, EY are the physical expectations; the *_hat arrays are the
    deviations from the stationary point (state minus x*, control minus
    u*, adjoint minus the stationary multiplier).
    """

    grid: np.ndarray
    step: float
    EX: np.ndarray
    Eu: np.ndarray
    EY: np.ndarray
    EX_hat: np.ndarray
    Eu_hat: np.ndarray
    EY_hat: np.ndarray

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def turnpike_deviation(self) -> np.ndarray:
        """|E state dev| + |E control dev| + |E adjoint dev| per grid time."""
        return (np.linalg.norm(self.EX_hat, axis=1)
                + np.linalg.norm(self.Eu_hat, axis=1)
                + np.linalg.norm(self.EY_hat, axis=1))


def mean_flow(problem: ReducedLQProblem, pt: MatrixTrajectory,
              phi_tp: VectorTrajectory, are: AreSolution,
              static: StaticSolution, x0,
              gains: MatrixTrajectory = None) -> MeanTrajectory:
    """Propagate the expected deviation m(t) = E[X(t)] - x* through

        m' = (A + B K_T(t)) m + B vhat(t),      m(0) = x0 - x*,

    and assemble the expected control through the feedback representation
    and the expected adjoint through  E[Y] - lam* = P_T m + phi_T.
    The terminal expected adjoint E[Y](T) vanishes identically.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    path = _closed_loop_path(problem, pt, phi_tp, are, static, gains)
    Phi, psi = affine_rk4_forward_maps(path.Acl_n, path.Acl_m,
                                       path.beta_n, path.beta_m, pt.step)
    m = scan_forward(Phi, psi, x0 - static.x_star)
    Eu_hat = np.einsum("tij,tj->ti", path.K_n, m) + path.vhat_n
    EY_hat = np.einsum("tij,tj->ti", pt.values, m) + phi_tp.values
    return MeanTrajectory(
        grid=pt.grid.copy(), step=pt.step,
        EX=m + static.x_star, Eu=Eu_hat + static.u_star,
        EY=EY_hat + static.lambda_star,
        EX_hat=m, Eu_hat=Eu_hat, EY_hat=EY_hat,
    )


# ---------------------------------------------------------------------------
# second moments


@dataclass
class MomentTrajectory:
    """First and second moments of the physical state plus the running
    expected cost (trapezoid accumulation of the exact moment integrand)."""

    grid: np.ndarray
    step: float
    EX: np.ndarray                 # (k, n)
    M: np.ndarray                  # (k, n, n), second moments E[X X^T]
    cost_running: np.ndarray       # (k,)
    expected_cost: float

    def covariance(self) -> np.ndarray:
        return self.M - np.einsum("ti,tj->tij", self.EX, self.EX)


def _moment_rhs(Acl, Ccl, beta, gamma, m, M):
    dm = Acl @ m + beta
    AM = Acl @ M
    CM = Ccl @ M
    cross = np.outer(beta, m)
    ccross = np.outer(Ccl @ m, gamma)
    dM = (AM + AM.T + CM @ Ccl.T + cross + cross.T
          + ccross + ccross.T + np.outer(gamma, gamma))
    return dm, dM


def _moment_loop(path: _ClosedLoopPath, m0, M0, n_cells, h):
    """Joint RK4 on (m, M) with stage-exact coefficients."""
    m, M = m0.copy(), M0.copy()
    ms = np.empty((n_cells + 1,) + m.shape)
    Ms = np.empty((n_cells + 1,) + M.shape)
    ms[0], Ms[0] = m, M
    for k in range(n_cells):
        coeffs = [
            (path.Acl_n[k], path.Ccl_n[k], path.beta_n[k], path.gamma_n[k]),
            (path.Acl_m[k], path.Ccl_m[k], path.beta_m[k], path.gamma_m[k]),
            (path.Acl_n[k + 1], path.Ccl_n[k + 1], path.beta_n[k + 1], path.gamma_n[k + 1]),
        ]
        dm1, dM1 = _moment_rhs(*coeffs[0], m, M)
        dm2, dM2 = _moment_rhs(*coeffs[1], m + 0.5 * h * dm1, M + 0.5 * h * dM1)
        dm3, dM3 = _moment_rhs(*coeffs[1], m + 0.5 * h * dm2, M + 0.5 * h * dM2)
        dm4, dM4 = _moment_rhs(*coeffs[2], m + h * dm3, M + h * dM3)
        m = m + (h / 6.0) * (dm1 + 2.0 * dm2 + 2.0 * dm3 + dm4)
        M = M + (h / 6.0) * (dM1 + 2.0 * dM2 + 2.0 * dM3 + dM4)
        M = 0.5 * (M + M.T)
        ms[k + 1], Ms[k + 1] = m, M
    return ms, Ms


def moment_flow(problem: ReducedLQProblem, pt: MatrixTrajectory,
                phi_tp: VectorTrajectory, are: AreSolution,
                static: StaticSolution, x0,
                gains: MatrixTrajectory = None) -> MomentTrajectory:
    """Propagate E[X] and E[X X^T] under the optimal feedback and accumulate
    the expected running cost exactly (quadratic forms in the moments).

    Raises if the implied covariance E[X X^T] - E[X] E[X]^T loses positive
    semidefiniteness beyond tolerance, which signals an integration-step
    problem rather than a modeling one.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    path = _closed_loop_path(problem, pt, phi_tp, are, static, gains)
    m0 = x0 - static.x_star
    ms, Ms = _moment_loop(path, m0, np.outer(m0, m0), pt.n_cells, pt.step)

    EX = ms + static.x_star
    M_bar = (Ms + np.einsum("ti,j->tij", ms, static.x_star)
             + np.einsum("i,tj->tij", static.x_star, ms)
             + np.outer(static.x_star, static.x_star))

    cov = Ms - np.einsum("ti,tj->tij", ms, ms)
    min_eig = float(np.min(np.linalg.eigvalsh(cov)))
    if min_eig < -_COV_TOL * (1.0 + float(np.max(np.abs(Ms)))):
        raise RuntimeError(
            f"covariance lost positive semidefiniteness (min eig {min_eig:.3e}); "
            "refine the integration step"
        )

    # E[u u^T] from the affine feedback u = u* + K_T (X - x*) + vhat.
    w = path.vhat_n + static.u_star
    Euu = (np.einsum("tij,tjk,tlk->til", path.K_n, Ms, path.K_n)
           + np.einsum("tij,tj,tk->tik", path.K_n, ms, w)
           + np.einsum("ti,tkj,tj->tik", w, path.K_n, ms)
           + np.einsum("ti,tj->tij", w, w))
    integrand = 0.5 * (np.einsum("ij,tji->t", problem.Qhat, M_bar)
                       + np.einsum("ij,tji->t", problem.R, Euu)
                       + 2.0 * (EX @ problem.qhat))
    steps = 0.5 * pt.step * (integrand[:-1] + integrand[1:])
    cost_running = np.concatenate([[0.0], np.cumsum(steps)])
    return MomentTrajectory(grid=pt.grid.copy(), step=pt.step, EX=EX, M=M_bar,
                            cost_running=cost_running,
                            expected_cost=float(cost_running[-1]))


def integral_second_moment(problem: ReducedLQProblem, pt: MatrixTrajectory,
                           phi_tp: VectorTrajectory, are: AreSolution,
                           static: StaticSolution, x0) -> float:
    """E | integral of (X(t) - x*) dt over [0, T] |^2, computed exactly by
    augmenting the deviation system with its running integral (the pair is
    again a linear SDE, so second moments close)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    path = _closed_loop_path(problem, pt, phi_tp, are, static)
    n = problem.n
    eye = np.eye(n)

    def augment(Acl, Ccl, beta, gamma):
        k = Acl.shape[0]
        A2 = np.zeros((k, 2 * n, 2 * n))
        A2[:, :n, :n] = Acl
        A2[:, n:, :n] = eye
        C2 = np.zeros_like(A2)
        C2[:, :n, :n] = Ccl
        b2 = np.concatenate([beta, np.zeros_like(beta)], axis=1)
        g2 = np.concatenate([gamma, np.zeros_like(gamma)], axis=1)
        return A2, C2, b2, g2

    A2n, C2n, b2n, g2n = augment(path.Acl_n, path.Ccl_n, path.beta_n, path.gamma_n)
    A2m, C2m, b2m, g2m = augment(path.Acl_m, path.Ccl_m, path.beta_m, path.gamma_m)
    aug_path = _ClosedLoopPath(A2n, A2m, C2n, C2m, None, None, None, None,
                               b2n, b2m, g2n, g2m)
    m0 = np.concatenate([x0 - static.x_star, np.zeros(n)])
    _, Ms = _moment_loop(aug_path, m0, np.outer(m0, m0), pt.n_cells, pt.step)
    return float(np.trace(Ms[-1][n:, n:]))


# ---------------------------------------------------------------------------
# value function


def value_function(problem: ReducedLQProblem, pt: MatrixTrajectory,
                   phi: VectorTrajectory, x0) -> float:
    """Finite-horizon optimal value at the initial state:

        V_T(x) = 1/2 <P_T(0) x, x> + <phi(0), x>
                 + 1/2 int_0^T ( <P_T s, s> + 2 <phi, b>
                                 - |weight(P_T)^{-1/2}(B^T phi + D^T P_T s)|^2 ) dt,

    with s the constant diffusion offset and phi the terminal-zero offset
    path from phi_value_ode.  Quadrature is the trapezoid rule on the
    shared grid.
    """
    require_same_grid(pt, phi, "Riccati path and value offset")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    B, D = problem.B, problem.D
    sig, b = problem.sigmahat, problem.bhat

    weight = problem.R + np.einsum("ji,tjk,kl->til", D, pt.values, D)
    w = (np.einsum("ji,tj->ti", B, phi.values)
         + np.einsum("ji,tjk,k->ti", D, pt.values, sig))
    quad = np.linalg.solve(weight, w[..., None])[..., 0]
    integrand = (np.einsum("tij,i,j->t", pt.values, sig, sig)
                 + 2.0 * (phi.values @ b)
                 - np.einsum("ti,ti->t", w, quad))
    return float(0.5 * x0 @ (pt.values[0] @ x0) + phi.values[0] @ x0
                 + 0.5 * trapezoid(integrand, pt.grid))


def optimal_control_offset(problem: ReducedLQProblem, pt: MatrixTrajectory,
                           phi_tp: VectorTrajectory, are: AreSolution,
                           static: StaticSolution,
                           gains: MatrixTrajectory = None) -> np.ndarray:
    """Affine part w(t) of the optimal feedback u(t, X) = K_T(t) X + w(t)
    in physical coordinates, sampled at the grid nodes."""
    gains = gain_schedule(problem, pt) if gains is None else gains
    path = _closed_loop_path(problem, pt, phi_tp, are, static, gains)
    return (static.u_star
            - np.einsum("tij,j->ti", path.K_n, static.x_star)
            + path.vhat_n)


# ---------------------------------------------------------------------------
# Monte Carlo oracle


@dataclass
class McEnsemble:
    """Euler-Maruyama ensemble statistics under an affine feedback.

    Standard errors are sample standard deviations over paths divided by
    sqrt(n_paths).  Results are bit-reproducible from (seed, n_paths, grid):
    each path consumes its own counter-based stream keyed by (seed, path
    index), partial sums are per fixed-size chunk, and chunks are merged
    in index order regardless of execution parallelism.
    """

    grid: np.ndarray
    h: float
    n_paths: int
    seed: int
    mean_X: np.ndarray
    se_X: np.ndarray
    mean_u: np.ndarray
    se_u: np.ndarray
    mean_sqnorm: np.ndarray
    se_sqnorm: np.ndarray
    mean_cost: float
    se_cost: float
    n_flagged: int = 0


_BATCH_PATHS = 4096        # paths marched per kernel call (bounds Z memory)


def _path_normals(seed: int, start: int, count: int, n_steps: int) -> np.ndarray:
    """Per-path standard-normal draws.

    Path k consumes its own counter-based stream with key (seed, k), so
    the draws a path sees are independent of chunking, batching, and
    thread scheduling."""
    Z = np.empty((count, n_steps))
    bitgen = np.random.Philox(counter=0, key=np.array([seed, 0], dtype=np.uint64))
    gen = np.random.Generator(bitgen)
    state = bitgen.state
    for i in range(count):
        # Re-key the one generator instead of constructing a fresh pair per
        # path; with counter and buffer reset this yields bit-identical
        # streams to Philox(counter=0, key=(seed, k)) at a fraction of the
        # setup cost.
        state["state"]["key"][:] = (seed, start + i)
        state["state"]["counter"][:] = 0
        state["buffer"][:] = 0
        state["buffer_pos"] = state["buffer"].shape[0]
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bitgen.state = state
        Z[i] = gen.standard_normal(n_steps)
    return Z


@numba.njit(cache=True, nogil=True)
def _march_kernel(X, Z, K, w, A, B, C, D, b, sig, Q, R, q, h, keep,
                  sum_X, sum_X2, sum_u, sum_u2, sum_s, sum_s2, cost, alive):
    """Scalar Euler-Maruyama march with in-order accumulation.

    Path-major: each path is marched to the horizon before the next one
    starts, so its noise row is read contiguously and the per-node
    accumulators stay cache-resident.  For every node the contributions
    add in path order, i.e. the reduction is the concatenation of partial
    sums in fixed path order, independent of any outer parallelism.
    Z must be pre-scaled by sqrt(h).
    """
    count, n = X.shape
    m = w.shape[1]
    n_steps = Z.shape[1]
    u = np.empty(m)
    xn = np.empty(n)
    for p in range(count):
        x = X[p]
        acc_paths = keep[p]
        g_prev = 0.0
        for j in range(n_steps + 1):
            Kj = K[j]
            wj = w[j]
            for a in range(m):
                acc = wj[a]
                for i in range(n):
                    acc += Kj[a, i] * x[i]
                u[a] = acc
            # running cost 0.5 (x'Qx + u'Ru) + q'x
            g = 0.0
            for i in range(n):
                row = 0.0
                for k2 in range(n):
                    row += Q[i, k2] * x[k2]
                g += 0.5 * x[i] * row + q[i] * x[i]
            for a in range(m):
                row = 0.0
                for a2 in range(m):
                    row += R[a, a2] * u[a2]
                g += 0.5 * u[a] * row
            if j > 0:
                cost[p] += 0.5 * h * (g_prev + g)
            g_prev = g
            if acc_paths:
                snorm = 0.0
                for i in range(n):
                    xi = x[i]
                    sum_X[j, i] += xi
                    sum_X2[j, i] += xi * xi
                    snorm += xi * xi
                for a in range(m):
                    ua = u[a]
                    sum_u[j, a] += ua
                    sum_u2[j, a] += ua * ua
                sum_s[j] += snorm
                sum_s2[j] += snorm * snorm
            if j < n_steps:
                zp = Z[p, j]
                for i in range(n):
                    drift = b[i]
                    noise = sig[i]
                    for k2 in range(n):
                        drift += A[i, k2] * x[k2]
                        noise += C[i, k2] * x[k2]
                    for a in range(m):
                        drift += B[i, a] * u[a]
                        noise += D[i, a] * u[a]
                    xn[i] = x[i] + h * drift + zp * noise
                for i in range(n):
                    x[i] = xn[i]
        ok = np.isfinite(cost[p])
        for i in range(n):
            ok = ok and np.isfinite(x[i])
        alive[p] = ok


def _simulate_batch(problem, K_nodes, w_nodes, x0, seed, start, count, h,
                    keep: Optional[np.ndarray] = None):
    """March a batch of paths and return its partial sums.

    ``keep`` restricts accumulation to a path subset (used to re-run a
    batch that saw non-finite states, so flagged paths never contaminate
    the statistics)."""
    n_steps = len(K_nodes) - 1
    Z = _path_normals(seed, start, count, n_steps)
    Z *= np.sqrt(h)
    X = np.tile(np.asarray(x0, dtype=float), (count, 1))
    keep_mask = np.ones(count, dtype=np.bool_) if keep is None else keep
    sums = {
        "X": np.zeros((n_steps + 1, problem.n)),
        "X2": np.zeros((n_steps + 1, problem.n)),
        "u": np.zeros((n_steps + 1, problem.m)),
        "u2": np.zeros((n_steps + 1, problem.m)),
        "s": np.zeros(n_steps + 1),
        "s2": np.zeros(n_steps + 1),
    }
    cost = np.zeros(count)
    alive = np.empty(count, dtype=np.bool_)
    _march_kernel(X, Z, K_nodes, w_nodes, problem.Ahat, problem.B,
                  problem.Chat, problem.D, problem.bhat, problem.sigmahat,
                  problem.Qhat, problem.R, problem.qhat, h, keep_mask,
                  sums["X"], sums["X2"], sums["u"], sums["u2"],
                  sums["s"], sums["s2"], cost, alive)
    cost_kept = cost[keep_mask]
    return {
        "sums": sums,
        "cost_sum": float(cost_kept.sum()),
        "cost_sumsq": float((cost_kept * cost_kept).sum()),
        "count": int(keep_mask.sum()),
        "finite": alive,
    }


def simulate_mc(problem: ReducedLQProblem, gains: MatrixTrajectory,
                offsets: np.ndarray, x0, n_paths: int, seed: int,
                max_workers: Optional[int] = None) -> McEnsemble:
    """Euler-Maruyama ensemble under the affine feedback u = K(t) X + w(t).

    ``gains`` supplies K at the grid nodes and ``offsets`` the matching
    w(t) rows (see optimal_control_offset).  The update per step is

        X+ = X + (A X + B u + b) h + (C X + D u + sigma) sqrt(h) Z,

    one standard-normal draw per step per path, consumed even where the
    diffusion is zero.  Pathwise costs use the trapezoid rule on the grid.

    Reproducibility: path k always sees the counter-based stream keyed
    (seed, k); per-batch partial sums accumulate over paths in index
    order and batches merge in index order, so outputs are bit-identical
    for identical (seed, n_paths, grid) regardless of the worker count.
    TURNPIKE_THREADS caps parallelism across batches (0 = auto, meaning
    sequential; the march kernel releases the GIL so explicit workers can
    help on multi-core hosts).

    Paths that leave the finite range are flagged and excluded; the run
    aborts when more than 0.1% of paths flag.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for standard errors")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (len(gains.grid), problem.m):
        raise ValueError("offsets must supply one control row per grid node")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    h = gains.step
    K_nodes = np.ascontiguousarray(gains.values)

    starts = list(range(0, n_paths, _BATCH_PATHS))
    if max_workers is None:
        env = os.environ.get("TURNPIKE_THREADS", "0")
        try:
            max_workers = int(env)
        except ValueError:
            max_workers = 0
    if max_workers == 0:
        max_workers = 1
    max_workers = max(1, min(max_workers, len(starts)))

    def run(start):
        count = min(_BATCH_PATHS, n_paths - start)
        part = _simulate_batch(problem, K_nodes, offsets, x0, seed, start,
                               count, h)
        if not part["finite"].all():
            part = _simulate_batch(problem, K_nodes, offsets, x0, seed, start,
                                   count, h, keep=part["finite"])
            part["flagged"] = count - int(part["finite"].sum())
        else:
            part["flagged"] = 0
        return part

    if max_workers == 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(run, starts))

    n_flagged = sum(p["flagged"] for p in parts)
    if n_flagged > 1e-3 * n_paths:
        raise RuntimeError(
            f"{n_flagged} of {n_paths} paths left the finite range; aborting"
        )

    total = {}
    for key in parts[0]["sums"]:
        acc = parts[0]["sums"][key].copy()
        for p in parts[1:]:
            acc += p["sums"][key]
        total[key] = acc
    count = sum(p["count"] for p in parts)
    cost_sum = sum(p["cost_sum"] for p in parts)
    cost_sumsq = sum(p["cost_sumsq"] for p in parts)

    def stats(s, s2):
        mean = s / count
        var = np.maximum(s2 / count - mean * mean, 0.0) * count / (count - 1)
        return mean, np.sqrt(var / count)

    mean_X, se_X = stats(total["X"], total["X2"])
    mean_u, se_u = stats(total["u"], total["u2"])
    mean_s, se_s = stats(total["s"], total["s2"])
    mean_c, se_c = stats(np.asarray(cost_sum), np.asarray(cost_sumsq))
    return McEnsemble(
        grid=gains.grid.copy(), h=h, n_paths=n_paths, seed=seed,
        mean_X=mean_X, se_X=se_X, mean_u=mean_u, se_u=se_u,
        mean_sqnorm=mean_s, se_sqnorm=se_s,
        mean_cost=float(mean_c), se_cost=float(se_c),
        n_flagged=n_flagged,
    )


# ---------------------------------------------------------------------------
# general affine-feedback cost (exact, via moments)


def feedback_cost(problem: LQProblem, gain: np.ndarray, w_cells: np.ndarray,
                  x0, T: float, h: float) -> float:
    """Exact expected cost of the constant-gain feedback u = gain X + w(t)
    with w piecewise constant on the integration cells.

    Works on a full problem (cross weight S and linear control cost r
    included); the running cost is evaluated from the first and second
    moments cell by cell, so the value is exact up to the integrator and
    trapezoid error.  This is the tool behind the reduction identity
    J_original(u) = J_reduced(v) - phi0 T / 2.
    """
    from ._integrate import plan_grid

    A, B, C, D = problem.A, problem.B, problem.C, problem.D
    b, sig = problem.b, problem.sigma
    Q, S, R, q, r = problem.Q, problem.S, problem.R, problem.q, problem.r
    K = np.asarray(gain, dtype=float)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    grid, h_eff, n_cells = plan_grid(T, h)
    w_cells = np.asarray(w_cells, dtype=float)
    if w_cells.shape != (n_cells, problem.m):
        raise ValueError(f"w_cells must have shape {(n_cells, problem.m)}")

    Acl = A + B @ K
    Ccl = C + D @ K

    def integrand(m, M, w):
        u_mean = K @ m + w
        quad = (np.trace(Q @ M) + 2.0 * np.trace((K.T @ S) @ M)
                + np.trace((K.T @ (R @ K)) @ M))
        lin = 2.0 * (w @ (S @ m)) + 2.0 * ((w @ R) @ (K @ m)) + w @ (R @ w)
        return 0.5 * (quad + lin) + q @ m + r @ u_mean

    m, M = x0.copy(), np.outer(x0, x0)
    cost = 0.0
    for k in range(n_cells):
        w = w_cells[k]
        beta = B @ w + b
        gamma = D @ w + sig
        g_left = integrand(m, M, w)
        dm1, dM1 = _moment_rhs(Acl, Ccl, beta, gamma, m, M)
        dm2, dM2 = _moment_rhs(Acl, Ccl, beta, gamma, m + 0.5 * h_eff * dm1,
                               M + 0.5 * h_eff * dM1)
        dm3, dM3 = _moment_rhs(Acl, Ccl, beta, gamma, m + 0.5 * h_eff * dm2,
                               M + 0.5 * h_eff * dM2)
        dm4, dM4 = _moment_rhs(Acl, Ccl, beta, gamma, m + h_eff * dm3,
                               M + h_eff * dM3)
        m = m + (h_eff / 6.0) * (dm1 + 2.0 * dm2 + 2.0 * dm3 + dm4)
        M = M + (h_eff / 6.0) * (dM1 + 2.0 * dM2 + 2.0 * dM3 + dM4)
        M = 0.5 * (M + M.T)
        cost += 0.5 * h_eff * (g_left + integrand(m, M, w))
    return float(cost)
