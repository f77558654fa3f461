"""
Two decaying levels in a row.

With levels 2 and 3 both decaying, the dark-state trick no longer works:
any route from |1> to |4> has to put weight on a decaying level.  The best
efficiency saturates at sqrt(1 + xi^2) - xi with xi = k/A, however long one
waits.

Run with ``python3 demos/four_level_asymptote.py``.
"""
import math

import numpy as np

from chaincontrol import ChainSystem, propagate, propagate_polar, reconstruct_full_controls
from chaincontrol import four_level as fl

# %%
"""
Short horizons (Case I) keep both mixing cosines at 1.  Past the threshold
cot^-1(2 xi)/A the optimum splits into three phases: pump only, a hold with
both outer fields off, then Stokes only.
"""
k = A = 1.0
print(f"case threshold for xi=1: {fl.case_threshold(k, A):.6f}")
for T in (0.3, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0):
    sol = fl.solve(k, A, T)
    hold = sol.hold[1] - sol.hold[0] if sol.case == fl.CASE_II else float("nan")
    print(f"T={T:5.1f}  case={sol.case:3s} tau={sol.tau:8.4f}  hold={hold:.2e}  "
          f"efficiency={sol.efficiency:.9f}")
print(f"asymptote sqrt(2) - 1 = {math.sqrt(2) - 1:.9f}")

# %%
"""
The asymptote as a function of xi.
"""
for xi in (0.0, 0.1, 0.5, 1.0, 2.0, 10.0):
    print(f"xi={xi:5.1f}  eta_inf={fl.asymptotic_efficiency(xi):.6f}")

# %%
"""
Check the formula by driving the real four-level chain with the
reconstructed pulses.
"""
T = 5.0
sol = fl.case2_solve(k, A, T)
sys = ChainSystem.four_level(k, A)
polar = propagate_polar(sys, sol.u_schedule(), tol=1e-11)
pulses = reconstruct_full_controls(sys, polar, sol.angle_controls(), n_samples=501)
x = propagate(sys, pulses, [1.0, 0.0, 0.0, 0.0], tol=1e-10).final
print(f"formula {sol.efficiency:.9f}  polar {polar.efficiency:.9f}  full chain {x[3]:.9f}")

t = pulses.grid
pump, stokes = pulses.values["pump"], pulses.values["stokes"]
print(f"pump on until t={t[pump > 0].max():.4f}, Stokes on from t={t[stokes > 0].min():.4f}")
print(f"pump peak {np.max(pump):.3f}, kicks at", [round(q.time, 4) for q in pulses.kicks])
