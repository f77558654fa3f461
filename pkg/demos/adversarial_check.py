"""
Can brute force beat the analytic optima?

Discretise the mixing cosines into piecewise-constant segments, then throw
random schedules and gradient ascent at the problem.  Nothing should land
above the closed-form efficiency; the best ascents should land just below.

Run with ``python3 demos/adversarial_check.py``.
"""
import numpy as np

from chaincontrol import ChainSystem, DiscretizedControlProblem
from chaincontrol import local_ascent, random_search, refine_and_extrapolate
from chaincontrol import four_level as fl
from chaincontrol.three_level import efficiency_bound, optimal_u

# %%
k, A, T = 1.0, 1.0, 10.0
bound = efficiency_bound(k, A, T)
prob = DiscretizedControlProblem(ChainSystem.three_level(k, A), T, 32)
rs = random_search(prob, 2000, seed=0)
print(f"three-level bound {bound:.8f}")
print(f"best of 2000 random schedules {rs.best_efficiency:.8f} ({rs.strata[rs.best_index]})")
asc = local_ascent(prob, rs.best_controls)
print(f"ascent from it {asc.efficiency:.8f} after {asc.iterations} iterations")

# %%
"""
Starting from the analytic control itself, the ascent only recovers the
discretisation error, which shrinks quickly with the number of segments.
"""
sol = optimal_u(k, A, T)
for n in (16, 32, 64, 128):
    p = prob.with_segments(n)
    r = local_ascent(p, p.sample(lambda t: [sol.u(t)], rule="average"))
    print(f"n={n:4d}: sampled u* {r.initial_efficiency:.8f} -> {r.efficiency:.8f}  "
          f"(gap to bound {bound - r.efficiency:.1e})")

# a flat start at u = 0.5 stalls on a poor local maximum at long T; from rest it does not
rep = refine_and_extrapolate(prob, [8, 16, 32, 64], init=lambda p: np.zeros(p.n_segments),
                             bound=bound)
print("refinement from rest, gaps to the bound:", [f"{g:.1e}" for g in rep.gaps])

# %%
"""
Five levels with three decaying in the middle: even with every bounded
coupling free, the search stays under the four-level efficiency.
"""
p5 = DiscretizedControlProblem(ChainSystem.uniform_chain(5, 1.0, 1.0), 20.0, 32,
                               free_couplings=True)
r5 = random_search(p5, 500, seed=1)
a5 = local_ascent(p5, r5.best_controls)
print(f"five-level best {max(r5.best_efficiency, a5.efficiency):.6f} "
      f"<= four-level {fl.efficiency(1.0, 1.0, 20.0):.6f}")
print("channels searched:", p5.channels, "decision variables:", np.size(a5.controls))
