"""The stationary optimization problem, done right and done naively.

The long-run operating point minimizes the quadratic cost plus the
P-weighted squared residual diffusion over the drift equilibria; the
diffusion belongs in the objective.  The naive alternative that forces
the diffusion to vanish as a second constraint either picks the wrong
point (first instance) or has no feasible point at all (second).
"""

import numpy as np

import slq_turnpike as sq

for which in (1, 2):
    prob = sq.example_problem(which)
    reduced = sq.reduce_problem(prob)
    are = sq.solve_are(reduced, h=2e-3)
    report = sq.static_divergence_report(reduced, are)
    st = report.static

    print(f"instance {which}:  P = {are.P[0, 0]:.10f}")
    print(f"  operating point  x* = {st.x_star[0]: .6f}, u* = {st.u_star[0]: .6f}")
    print(f"  multiplier       lambda* = {st.lambda_star[0]: .10f}")
    print(f"  residual diffusion sigma* = {st.sigma_star[0]: .6f}")
    print(f"  objective F = {st.F_value: .6f},  long-run value V = {st.V_static: .6f}")
    print(f"  KKT residual {st.stationarity_residual:.1e}, "
          f"two-route gap {st.cross_check_gap:.1e}")
    if report.naive.feasible:
        print(f"  naive variant: feasible at x = {report.naive.x[0]:.6f}, "
              f"u = {report.naive.u[0]:.6f}  -> agrees: {report.agrees}")
    else:
        print("  naive variant: infeasible (the two constraint sets contradict)")
    print()

print("second instance stationary value, closed form: (5/2 + sqrt 5)/2 =",
      0.5 * (2.5 + np.sqrt(5.0)))
