"""
Which relaxation-free levels can be connected at finite power?

A pair of stable levels can be linked without loss (in the long-time limit)
exactly when some path between them never steps from one decaying level
onto another.  Single decaying bridges are fine, STIRAP handles them.

Run with ``python3 demos/controllability.py``.
"""
from chaincontrol import ChainSystem, CouplingGraph, is_controllable
from chaincontrol import chain_efficiency_upper_bound
from chaincontrol.n_chain import chain_graph, decaying_runs, example_graph

# %%
for name in ("controllable", "blocked"):
    rep = is_controllable(example_graph(name))
    print(f"{name}: controllable={rep.controllable}, counterexample={rep.counterexample}")
    for pair, w in rep.witnesses.items():
        segs = " + ".join(f"{t}({'-'.join(map(str, s))})" for t, s in w.segments)
        print(f"   {pair}: {w.nodes}  = {segs}")

# %%
"""
A hand-made graph with string labels: a ground manifold g1, g2 linked
through an excited level e, and a target t behind two excited levels.
"""
g = CouplingGraph({"g1": 0, "g2": 0, "t": 0, "e": 1, "e2": 1, "e3": 1},
                  (("g1", "e"), ("e", "g2"), ("g2", "e2"), ("e2", "e3"), ("e3", "t")),
                  ("g1", "g2", "t"))
rep = is_controllable(g)
print("labelled graph:", rep.controllable, rep.counterexample)
print("adding a direct e2-t coupling:", is_controllable(g.with_edge("e2", "t")).controllable)

# %%
"""
Linear chains: the longest run of decaying levels sets the infinite-time
bound.  Runs of two or more inherit the four-level asymptote.
"""
for N in (3, 4, 5, 8):
    sys = ChainSystem.uniform_chain(N, 1.0, 1.0)
    run = max(decaying_runs(sys))
    ok = is_controllable(chain_graph(sys)).controllable
    print(f"N={N}: decaying run {run}, controllable={ok}, "
          f"bound={chain_efficiency_upper_bound(run, 1.0):.6f}")
