import numpy as np
import pytest
import scipy.linalg

import slq_turnpike as sq
from slq_turnpike.riccati import FlowDivergence, GainMaps, MatrixTrajectory

from conftest import random_stabilizable_problem


def test_gain_maps_match_formulas(ex2_reduced):
    gm = GainMaps(ex2_reduced)
    rng = np.random.default_rng(2)
    for _ in range(5):
        P = rng.standard_normal((1, 1))
        P = P + P.T
        A, B, C, D = ex2_reduced.Ahat, ex2_reduced.B, ex2_reduced.Chat, ex2_reduced.D
        assert np.allclose(gm.lyapunov_term(P),
                           P @ A + A.T @ P + C.T @ P @ C + ex2_reduced.Qhat)
        assert np.allclose(gm.cross_term(P), B.T @ P + D.T @ P @ C)
        assert np.allclose(gm.control_weight(P), ex2_reduced.R + D.T @ P @ D)
        if np.linalg.eigvalsh(gm.control_weight(P))[0] > 0:
            K = gm.feedback_gain(P)
            assert np.allclose(gm.control_weight(P) @ K, -gm.cross_term(P))


def test_sigma_flow_example1(ex1_reduced, ex1_are):
    sig = sq.sigma_flow(ex1_reduced, T=6.0, h=1e-3)
    assert np.array_equal(sig.values[0], np.zeros((1, 1)))
    i5 = int(round(5.0 / sig.step))
    assert abs(sig.values[i5, 0, 0] - 2.0) < 1e-5
    # monotone and dominated by the limit
    diffs = sig.values[1:] - sig.values[:-1]
    assert np.linalg.eigvalsh(diffs).min() >= -1e-9
    assert np.linalg.eigvalsh(ex1_are.P - sig.values).min() >= -1e-9


def test_sigma_flow_linear_closed_form(linear_scalar):
    sig = sq.sigma_flow(linear_scalar, T=4.0, h=1e-3)
    exact = 0.5 * (1.0 - np.exp(-2.0 * sig.grid))
    assert np.max(np.abs(sig.values[:, 0, 0] - exact)) < 1e-12


def test_sigma_flow_divergence_carries_time():
    runaway = sq.ReducedLQProblem(
        n=1, m=1, Ahat=np.array([[1.0]]), B=np.zeros((1, 1)),
        Chat=np.zeros((1, 1)), D=np.zeros((1, 1)),
        bhat=np.zeros(1), sigmahat=np.zeros(1),
        Qhat=np.array([[1.0]]), R=np.array([[1.0]]),
        qhat=np.zeros(1), phi0=0.0,
    )
    with pytest.raises(FlowDivergence) as err:
        sq.sigma_flow(runaway, T=40.0, h=1e-3)
    assert 0.0 < err.value.blow_up_time <= 40.0


def test_solve_are_reference_values(ex1_are, ex2_are, linear_scalar):
    assert abs(ex1_are.P[0, 0] - 2.0) < 1e-10
    assert abs(ex1_are.theta[0, 0] + 2.0) < 1e-10
    assert ex1_are.residual <= 1e-10 * (1.0 + 2.0)
    assert ex1_are.closed_loop_abscissa < 0

    assert abs(ex2_are.P[0, 0] - (2.0 + np.sqrt(5.0))) < 1e-10

    lin = sq.solve_are(linear_scalar, h=1e-3)
    assert abs(lin.P[0, 0] - 0.5) < 1e-12
    assert np.allclose(lin.theta, 0.0)


def test_are_solution_invariants(ex1_reduced, ex1_are):
    gm = GainMaps(ex1_reduced)
    assert gm.residual_norm(ex1_are.P) <= 1e-10 * (1.0 + np.linalg.norm(ex1_reduced.Qhat))
    assert gm.closed_loop_residual(ex1_are.P) <= 1e-9
    assert np.linalg.eigvalsh(ex1_are.P)[0] > 0
    Acl, Ccl, _ = gm.closed_loop(ex1_are.P)
    assert sq.is_ms_stable(Acl, Ccl).stable


def test_finite_horizon_terminal_and_limit(ex1_reduced, ex1_are):
    pt = sq.finite_horizon_riccati(ex1_reduced, T=10.0, h=1e-3)
    assert np.array_equal(pt.values[-1], np.zeros((1, 1)))       # P_T(T) = 0
    assert abs(pt.values[0, 0, 0] - 2.0) < 1e-9                  # P_T(0) -> limit
    interior = pt.values[:-1]
    assert np.linalg.eigvalsh(interior).min() > 0                # P_T(t) > 0 for t < T


def test_backward_riccati_two_solver_agreement(ex1_reduced):
    pt = sq.finite_horizon_riccati(ex1_reduced, T=10.0, h=1e-3)
    bw = sq.backward_riccati(ex1_reduced, T=10.0, h=1e-3)
    assert np.array_equal(pt.grid, bw.grid)
    assert np.max(np.abs(pt.values - bw.values)) <= 1e-9


def test_rk4_order_on_closed_form(linear_scalar):
    errs = []
    for h in (2e-2, 1e-2):
        sig = sq.sigma_flow(linear_scalar, T=1.0, h=h)
        exact = 0.5 * (1.0 - np.exp(-2.0))
        errs.append(abs(sig.values[-1, 0, 0] - exact))
    ratio = errs[0] / errs[1]
    assert 10.0 <= ratio <= 22.0      # fourth order: ~16x per halving


def test_gain_schedule_endpoints(ex1_reduced, ex1_are):
    pt = sq.finite_horizon_riccati(ex1_reduced, T=10.0, h=1e-3)
    gains = sq.gain_schedule(ex1_reduced, pt)
    assert np.array_equal(gains.values[-1], np.zeros((1, 1)))    # K(0) = 0
    assert abs(gains.values[0, 0, 0] + 2.0) < 1e-8


def test_gain_schedule_gap_envelope(ex1_reduced, ex1_are):
    """||K_T(t) - K|| decays like exp(-2 lambda (T - t)); fitted slope of
    the log-gap must reach at least the flow rate."""
    T = 12.0
    pt = sq.finite_horizon_riccati(ex1_reduced, T=T, h=2e-3)
    gains = sq.gain_schedule(ex1_reduced, pt)
    gap = np.linalg.norm(gains.values - ex1_are.theta, axis=(1, 2))
    mask = (gap > 1e-12) & (pt.grid < T - 0.5)
    slope, _ = np.polyfit(T - pt.grid[mask], np.log(gap[mask]), 1)
    rate = -slope
    assert rate > 2.0        # at least the closed-loop bound, here ~3
    K_env = np.exp(np.polyfit(T - pt.grid[mask], np.log(gap[mask]), 1)[1])
    env = K_env * np.exp(-rate * (T - pt.grid[mask])) * (1.0 + 1e-6)
    # fitted envelope is consistent within a factor on the fit window
    assert np.all(gap[mask] <= 3.0 * env)


def test_phi_value_zero_without_forcing(linear_scalar):
    pt = sq.finite_horizon_riccati(linear_scalar, T=5.0, h=1e-2)
    phi = sq.phi_value_ode(linear_scalar, pt)
    assert np.array_equal(phi.values[-1], np.zeros(1))
    assert np.max(np.abs(phi.values)) == 0.0


def test_phi_value_richardson_cross_check(ex1_reduced):
    vals = {}
    for h in (2e-3, 1e-3):
        pt = sq.finite_horizon_riccati(ex1_reduced, T=10.0, h=h)
        vals[h] = sq.phi_value_ode(ex1_reduced, pt).values[0, 0]
    assert abs(vals[2e-3] - vals[1e-3]) < 1e-8


def test_phi_value_constant_coefficient_closed_form(ex1_reduced, ex1_are):
    """Freezing the Riccati path at its limit makes the offset ODE linear
    with constant coefficients; the integrator must match the matrix
    exponential formula."""
    T, h = 3.0, 1e-3
    from slq_turnpike._integrate import plan_grid
    grid, h_eff, n_cells = plan_grid(T, h)
    P = ex1_are.P
    const_pt = MatrixTrajectory(grid, np.repeat(P[None], n_cells + 1, axis=0),
                                np.repeat(P[None], n_cells, axis=0), h_eff)
    phi = sq.phi_value_ode(ex1_reduced, const_pt)
    gm = GainMaps(ex1_reduced)
    Acl, Ccl, _ = gm.closed_loop(P)
    f = (Ccl.T @ (P @ ex1_reduced.sigmahat) + P @ ex1_reduced.bhat
         + ex1_reduced.qhat)
    for idx in (0, n_cells // 2):
        t = grid[idx]
        expected = (scipy.linalg.expm(Acl.T * (T - t)) - np.eye(1)) @ \
            np.linalg.solve(Acl.T, f)
        assert np.allclose(phi.values[idx], expected, atol=1e-8)


def test_phi_turnpike_trivial_and_terminal(ex1_reduced, ex1_are,
                                           ex2_reduced, ex2_are):
    pt = sq.finite_horizon_riccati(ex1_reduced, T=5.0, h=1e-2)
    phi = sq.phi_turnpike_ode(ex1_reduced, pt, ex1_are.P,
                              np.zeros(1), np.zeros(1))
    assert np.max(np.abs(phi.values)) == 0.0

    st2 = sq.solve_static(ex2_reduced, ex2_are)
    pt2 = sq.finite_horizon_riccati(ex2_reduced, T=5.0, h=1e-2)
    phi2 = sq.phi_turnpike_ode(ex2_reduced, pt2, ex2_are.P,
                               st2.lambda_star, st2.sigma_star)
    assert phi2.values[-1, 0] == pytest.approx(-(2.5 + np.sqrt(5.0)), abs=1e-9)


def test_phi_turnpike_decays_from_terminal(ex1_reduced, ex1_are, ex1_static):
    T = 15.0
    pt = sq.finite_horizon_riccati(ex1_reduced, T=T, h=2e-3)
    phi = sq.phi_turnpike_ode(ex1_reduced, pt, ex1_are.P,
                              ex1_static.lambda_star, ex1_static.sigma_star)
    mag = np.abs(phi.values[:, 0])
    assert mag.max() > 0
    mask = (mag > 1e-12) & (pt.grid < T - 0.5)
    slope, intercept = np.polyfit(T - pt.grid[mask], np.log(mag[mask]), 1)
    lam = -slope
    assert lam > 0.5
    envelope = np.exp(intercept) * np.exp(-lam * (T - pt.grid)) * (1 + 1e-6)
    assert np.all(mag[mask] <= 3.0 * envelope[mask])


def test_measure_decay_rate_values(ex1_reduced, ex1_are, linear_scalar):
    sig = sq.sigma_flow(ex1_reduced, T=10.0, h=1e-3)
    fit = sq.measure_decay_rate(sig, ex1_are.P)
    assert 2.7 <= fit.rate <= 3.3

    lin_are = sq.solve_are(linear_scalar, h=1e-3)
    sig_lin = sq.sigma_flow(linear_scalar, T=12.0, h=1e-3)
    fit_lin = sq.measure_decay_rate(sig_lin, lin_are.P)
    assert fit_lin.rate == pytest.approx(2.0, abs=0.01)


def test_measure_decay_rate_self_consistency(linear_scalar):
    lin_are = sq.solve_are(linear_scalar, h=1e-3)
    rates = []
    for h in (2e-3, 1e-3):
        sig = sq.sigma_flow(linear_scalar, T=12.0, h=h)
        rates.append(sq.measure_decay_rate(sig, lin_are.P).rate)
    assert abs(rates[0] - rates[1]) / rates[1] < 0.02
    # substituting the last iterate for the limit keeps the fit well-defined
    sig = sq.sigma_flow(linear_scalar, T=14.0, h=1e-3)
    fit = sq.measure_decay_rate(sig, sig.values[-1])
    assert 1.8 <= fit.rate <= 2.2


def test_measure_decay_rate_empty_window(linear_scalar):
    sig = sq.sigma_flow(linear_scalar, T=0.01, h=1e-3)   # nothing decayed yet
    lin_are = sq.solve_are(linear_scalar, h=1e-3)
    with pytest.raises(ValueError):
        sq.measure_decay_rate(sig, lin_are.P)


def test_monotonicity_random_instances():
    rng = np.random.default_rng(31)
    for n in (2, 3):
        prob = random_stabilizable_problem(rng, n, 2)
        are = sq.solve_are(prob, h=5e-3)
        sig = are.sigma
        stride = max(1, sig.n_cells // 40)
        sub = sig.values[::stride]
        diffs = sub[None, :] - sub[:, None]
        i, j = np.triu_indices(len(sub), k=1)
        pair_eigs = np.linalg.eigvalsh(diffs[i, j])
        assert pair_eigs.min() >= -1e-9
        assert np.linalg.eigvalsh(are.P - sig.values).min() >= -1e-9


def test_perturbed_trajectory_fails_monotonicity(ex1_reduced):
    """The PSD-order checks do catch corrupted data (negative control)."""
    sig = sq.sigma_flow(ex1_reduced, T=4.0, h=1e-2)
    values = sig.values.copy()
    values[200] = values[250] + 1e-3      # artificial order violation
    diffs = values[1:] - values[:-1]
    assert np.linalg.eigvalsh(diffs).min() < -1e-9


def test_grid_mismatch_rejected(ex1_reduced):
    pt = sq.finite_horizon_riccati(ex1_reduced, T=2.0, h=1e-2)
    other = sq.finite_horizon_riccati(ex1_reduced, T=2.0, h=5e-3)
    gains = sq.gain_schedule(ex1_reduced, other)
    with pytest.raises(ValueError):
        sq.phi_value_ode(ex1_reduced, pt, gains=gains)
