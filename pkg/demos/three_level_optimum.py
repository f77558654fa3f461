"""
Optimal transfer through a single decaying level.

Three levels, the middle one decaying at rate k.  The Stokes coupling is
capped at A and the pump is free.  The question is how much amplitude can
reach |3> by time T, and what the pulses that do it look like.

Run with ``python3 demos/three_level_optimum.py``.
"""
import numpy as np

from chaincontrol import ChainSystem, optimal_u, propagate, propagate_polar
from chaincontrol import reconstruct_full_controls, stirap_limit_pulses
from chaincontrol.three_level import critical_time, efficiency_bound

k, A = 1.0, 1.0

# %%
"""
Below the critical time T_M the best one can do is keep the mixing cosine
u at 1 (all weight on the Stokes transition).  Above it, u starts small and
rises to 1 at the switching time tau, after which it stays pinned.
"""
print(f"T_M(k={k}, A={A}) = {critical_time(k, A):.6f}")
print(f"T_M(10, 10) = {critical_time(10, 10):.6f}")

for T in (0.3, 2.0, 5.0, 10.0, 20.0):
    sol = optimal_u(k, A, T)
    print(f"T={T:5.1f}  case={sol.case:10s} tau={sol.tau:8.4f}  u(0)={sol.u0:.4f}  "
          f"efficiency={sol.efficiency:.6f}")

# %%
"""
The efficiency climbs towards 1 as T grows but never reaches it at finite T.
"""
Ts = np.array([1, 3, 10, 30, 100, 300, 1000.0])
print("1 - efficiency:", ", ".join(f"{1 - efficiency_bound(k, A, T):.2e}" for T in Ts))

# %%
"""
Now rebuild the real pulses from u*(t).  The pump follows from keeping the
bright/dark mixing angle on its prescribed path.  At t = 0 the angle has to
jump onto that path, which takes a pump kick (a delta pulse of finite
area); u reaches 1 continuously at tau, so the kick recorded there is
empty.  The last stretch, where u is pinned at 1, would need an unbounded
pump and is flagged rather than given a number.
"""
T = 10.0
sol = optimal_u(k, A, T)
sys = ChainSystem.three_level(k, A)
polar = propagate_polar(sys, sol.u_schedule(), tol=1e-11)
pulses = reconstruct_full_controls(sys, polar, sol.angle_controls(), n_samples=401)
for q in pulses.kicks:
    print(f"kick on {q.channel} at t={q.time:.4f} with area {q.area:.4f}")
print("unbounded stretches:", dict(pulses.unbounded))

traj = propagate(sys, pulses, [1.0, 0.0, 0.0], tol=1e-10)
print(f"closed form {sol.efficiency:.9f}  polar {polar.efficiency:.9f}  "
      f"full chain {traj.final[2]:.9f}")

# %%
"""
For long horizons the optimum looks like STIRAP: the population rides in
the dark state, Stokes first, pump ramping up.  The adiabatic dark-state
pulses below reach almost the same amplitude at T = 100.
"""
s = stirap_limit_pulses(k, A, 100.0)
tr = propagate(sys, s, [1.0, 0.0, 0.0], tol=1e-10, t_eval=np.linspace(0, 100, 1001))
print(f"dark-state pulses: |3> population {tr.populations[-1, 2]:.5f}, "
      f"max |2> population {tr.populations[:, 1].max():.2e}")
print(f"optimal ceiling at T=100: {efficiency_bound(k, A, 100.0) ** 2:.5f}")
