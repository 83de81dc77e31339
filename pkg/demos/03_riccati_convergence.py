"""The monotone Riccati flow, its finite-horizon reversal, the stationary
limit, and the measured exponential convergence rate.

The forward flow starts at zero, increases in the positive-semidefinite
order, and approaches the stationary solution P from below; its value at
T - t is the finite-horizon solution with terminal condition zero, so a
single integration serves every horizon up to T.
"""

import numpy as np

import slq_turnpike as sq

reduced = sq.reduce_problem(sq.example_problem(1))

are = sq.solve_are(reduced, h=1e-3)
print("stationary solve: P=%.12f gain=%.12f residual=%.1e (refined=%s)" %
      (are.P[0, 0], are.theta[0, 0], are.residual, are.refined))
print("closed-loop mean-square abscissa: %.4f" % are.closed_loop_abscissa)

sig = sq.sigma_flow(reduced, T=8.0, h=1e-3)
for t in (0.5, 1.0, 2.0, 4.0, 8.0):
    i = int(round(t / sig.step))
    print("  Sigma(%.1f) = %.9f   gap to P = %.2e" %
          (t, sig.values[i, 0, 0], abs(are.P[0, 0] - sig.values[i, 0, 0])))

fit = sq.measure_decay_rate(sig, are.P)
print("measured decay rate: %.4f (linearized-flow prediction: 3)" % fit.rate)

# time reversal vs direct backward integration
pt = sq.finite_horizon_riccati(reduced, T=8.0, h=1e-3)
bw = sq.backward_riccati(reduced, T=8.0, h=1e-3)
print("\nP_T(T) = %s (terminal condition)" % pt.values[-1].ravel())
print("max |reversal - backward| over the grid: %.2e" %
      np.max(np.abs(pt.values - bw.values)))

# the gain schedule vanishes at the horizon and settles at the
# stationary gain in the interior
gains = sq.gain_schedule(reduced, pt)
print("\ngain schedule: K(0)=%.6f ... K(T/2)=%.6f ... K(T)=%.1f" %
      (gains.values[0, 0, 0], gains.values[len(gains.grid) // 2, 0, 0],
       gains.values[-1, 0, 0]))
