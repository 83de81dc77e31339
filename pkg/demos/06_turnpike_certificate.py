"""Certify the turnpike behavior over growing horizons.

For each horizon the expected deviations of state, control, and adjoint
from the stationary point are summed per time and bounded by a fitted
envelope K (e^{-mu t} + e^{-mu (T-t)}); the constants must not drift with
the horizon, the interior window must obey 2 K e^{-mu delta T}, and both
the time averages and the value per unit time must approach their
stationary counterparts.
"""

import numpy as np

import slq_turnpike as sq

reduced = sq.reduce_problem(sq.example_problem(1))
study = sq.turnpike_study(reduced, np.array([1.0]), [10.0, 20.0, 40.0],
                          h=2e-3, with_integral_ms=True)

print("fitted envelopes (deviation <= K (e^{-mu t} + e^{-mu (T-t)})):")
for fit, check in zip(study.fits, study.window_checks):
    print("  T=%4.0f: K=%.3f mu=%.3f  max violation %.1e  "
          "interior sup %.2e <= bound %.2e (%s)" %
          (fit.T, fit.K, fit.mu, fit.max_violation,
           check.measured_sup, check.bound, "ok" if check.passed else "VIOLATED"))

print("\ntime averages (gap to the stationary point):")
for row in study.time_average:
    print("  T=%4.0f: |avg X - x*| = %.5f   |avg u - u*| = %.5f   "
          "(1/T)E|int dev|^2 = %.4f" %
          (row.T, row.x_gap_norm, row.u_gap_norm, row.integral_ms_over_T))

print("\nvalue per unit time (stationary value %.3f):" %
      study.value_average.v_static)
for T, avg, err in zip(study.value_average.T_list,
                       study.value_average.averages,
                       study.value_average.errors):
    print("  T=%4.0f: V_T/T = %+.5f   error %.5f" % (T, avg, err))

mid = [m.turnpike_deviation()[len(m.grid) // 2] for m in study.means]
print("\nmidpoint deviation, halving geometrically with the horizon:")
print("  " + "  ".join("T=%.0f: %.2e" % (T, d)
                       for T, d in zip(study.T_list, mid)))
