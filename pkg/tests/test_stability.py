import numpy as np
import pytest

import slq_turnpike as sq
from slq_turnpike.stability import second_moment_flow


def vec_f(M):
    return M.reshape(-1, order="F")


def test_generator_scalar_cases():
    assert sq.ms_generator([[0.0]], [[1.0]]) == pytest.approx(np.array([[1.0]]))
    assert sq.ms_generator([[-2.0]], [[1.0]]) == pytest.approx(np.array([[-3.0]]))


def test_generator_kron_identity_case():
    G = sq.ms_generator(-np.eye(2), np.zeros((2, 2)))
    assert np.allclose(G, -2.0 * np.eye(4))


def test_generator_matches_moment_flow_vectorization():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 3))
    C = rng.standard_normal((3, 3))
    M = rng.standard_normal((3, 3))
    M = M + M.T
    G = sq.ms_generator(A, C)
    direct = A @ M + M @ A.T + C @ M @ C.T
    assert np.allclose(G @ vec_f(M), vec_f(direct), atol=1e-12)


def test_is_ms_stable_verdicts():
    unstable = sq.is_ms_stable([[0.0]], [[1.0]])
    assert not unstable.stable
    assert unstable.generator_abscissa == pytest.approx(1.0)
    assert unstable.lyapunov_witness is None

    stable = sq.is_ms_stable([[-2.0]], [[1.0]])
    assert stable.stable
    assert stable.beta == pytest.approx(3.0)
    assert stable.alpha >= 1.0
    assert stable.lyapunov_witness is not None

    diag = sq.is_ms_stable(-np.eye(2), np.zeros((2, 2)))
    assert diag.stable and diag.beta == pytest.approx(2.0)
    assert np.allclose(diag.lyapunov_witness, 0.5 * np.eye(2), atol=1e-12)
    assert diag.witness_residual < 1e-12


def test_alpha_envelope_holds_on_grid():
    A = np.array([[-1.0, 0.8], [0.0, -1.5]])
    C = np.array([[0.3, 0.0], [0.1, 0.2]])
    report = sq.is_ms_stable(A, C)
    assert report.stable
    grid, values = second_moment_flow(A, C, T=10.0 / report.beta, h=0.01)
    traces = np.einsum("tii->t", values)
    assert np.all(traces <= report.alpha * np.exp(-report.beta * grid) * (1 + 1e-9))


def test_witness_existence_matches_verdict():
    rng = np.random.default_rng(17)
    for _ in range(50):
        A = rng.standard_normal((2, 2)) - rng.uniform(-0.5, 1.5) * np.eye(2)
        C = 0.6 * rng.standard_normal((2, 2))
        report = sq.is_ms_stable(A, C)
        has_witness = report.lyapunov_witness is not None
        assert report.stable == has_witness
        if has_witness:
            P = report.lyapunov_witness
            lhs = P @ A + A.T @ P + C.T @ P @ C
            assert np.linalg.eigvalsh(P)[0] > 0
            assert np.max(np.linalg.eigvalsh(0.5 * (lhs + lhs.T))) < 0


def test_generator_abscissa_matches_trace_slope():
    rng = np.random.default_rng(23)
    for _ in range(5):
        A = rng.standard_normal((2, 2))
        A = 0.5 * (A + A.T) - (0.6 + np.max(np.linalg.eigvalsh(0.5 * (A + A.T)))) * np.eye(2)
        C = 0.2 * rng.standard_normal((2, 2))
        C = 0.5 * (C + C.T)
        report = sq.is_ms_stable(A, C)
        if not report.stable:
            continue
        t_end = 12.0 / report.beta
        grid, values = second_moment_flow(A, C, T=t_end, h=t_end / 4000)
        traces = np.einsum("tii->t", values)
        late = grid >= 0.5 * t_end
        slope, _ = np.polyfit(grid[late], np.log(traces[late]), 1)
        assert slope == pytest.approx(report.generator_abscissa,
                                      rel=0.05)


def test_moment_ode_consistent_with_monte_carlo():
    """tr M(t) from the moment ODE equals the sampled E|Phi(t)|^2 within
    three standard errors (columns of the fundamental solution simulated
    as uncontrolled paths)."""
    A = np.array([[-1.0, 0.5], [0.0, -1.2]])
    C = np.array([[0.4, 0.0], [0.2, 0.3]])
    T, h, n_paths = 2.0, 1e-3, 20000
    prob = sq.ReducedLQProblem(
        n=2, m=1, Ahat=A, B=np.zeros((2, 1)), Chat=C, D=np.zeros((2, 1)),
        bhat=np.zeros(2), sigmahat=np.zeros(2),
        Qhat=np.eye(2), R=np.eye(1), qhat=np.zeros(2), phi0=0.0,
    )
    from slq_turnpike._integrate import plan_grid
    grid, h_eff, n_cells = plan_grid(T, h)
    zero_gains = sq.MatrixTrajectory(grid, np.zeros((n_cells + 1, 1, 2)),
                                     np.zeros((n_cells, 1, 2)), h_eff)
    offsets = np.zeros((n_cells + 1, 1))

    _, values = second_moment_flow(A, C, T=T, h=h_eff)
    checks = [int(round(tq / h_eff)) for tq in (0.5, 1.0, 2.0)]
    total_mean = np.zeros(n_cells + 1)
    total_var = np.zeros(n_cells + 1)
    for col, e in enumerate(np.eye(2)):
        ens = sq.simulate_mc(prob, zero_gains, offsets, e, n_paths, seed=100 + col)
        total_mean += ens.mean_sqnorm
        total_var += ens.se_sqnorm ** 2
    traces = np.einsum("tii->t", values)
    se = np.sqrt(total_var)
    for idx in checks:
        assert abs(total_mean[idx] - traces[idx]) <= 3.0 * se[idx]


def test_is_stabilizable_by_synthesis(ex1):
    result = sq.is_stabilizable(ex1)
    assert result.stabilizable is True
    assert result.closed_loop_abscissa < 0

    hopeless = sq.is_stabilizable((np.array([[1.0]]), np.zeros((1, 1)),
                                   np.zeros((1, 1)), np.zeros((1, 1))))
    assert hopeless.stabilizable is False

    already = sq.is_stabilizable((np.array([[-1.0]]), np.zeros((1, 1)),
                                  np.zeros((1, 1)), np.array([[1.0]])))
    assert already.stabilizable is True
    assert np.allclose(already.theta, 0.0)


def test_is_stabilizable_indeterminate_never_silent_false():
    """The all-zero system drifts nowhere: the probe flow grows linearly,
    neither stalling nor diverging, so the verdict must be the distinct
    indeterminate value rather than a silent False."""
    zeros = np.zeros((1, 1))
    result = sq.is_stabilizable((zeros, zeros, zeros, zeros), h=1e-2, t_max=25.0)
    assert result.stabilizable is None
    assert "t_max" in result.detail or "budget" in result.detail.lower() \
        or "stall" in result.detail


def test_matrix_exponential_decay_scalar():
    alpha_half, beta_half = sq.matrix_exponential_decay(np.array([[-2.0]]))
    assert beta_half == pytest.approx(2.0, abs=1e-9)
    t = np.linspace(0, 4, 200)
    assert np.all(np.exp(-2.0 * t) <= alpha_half * np.exp(-beta_half * t) * (1 + 1e-9))


def test_matrix_exponential_decay_diagonal():
    alpha_half, beta_half = sq.matrix_exponential_decay(-np.eye(2))
    assert beta_half == pytest.approx(1.0, abs=1e-9)
    assert alpha_half >= np.sqrt(2.0) - 1e-9
    assert alpha_half == pytest.approx(np.sqrt(2.0), rel=1e-6)
    t = np.linspace(0, 5, 100)
    assert np.all(np.sqrt(2.0) * np.exp(-t) <= alpha_half * np.exp(-beta_half * t) * (1 + 1e-9))


def test_matrix_exponential_decay_closed_loop_rate(ex1_are):
    # closed loop of the first bundled instance with its loop diffusion
    Acl = np.array([[-2.0]])
    Ccl = np.array([[1.0]])
    alpha_half, beta_half = sq.matrix_exponential_decay(Acl, Ccl)
    assert beta_half == pytest.approx(1.5, abs=1e-9)
    t = np.linspace(0, 6, 300)
    assert np.all(np.exp(-2.0 * t) <= alpha_half * np.exp(-beta_half * t) * (1 + 1e-9))


def test_matrix_exponential_decay_rejects_unstable():
    with pytest.raises(ValueError):
        sq.matrix_exponential_decay(np.array([[0.5]]))
