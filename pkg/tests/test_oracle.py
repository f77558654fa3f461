import math

import numpy as np
import pytest
from scipy.optimize import approx_fprime

from chaincontrol import four_level as fl
from chaincontrol import oracle as o
from chaincontrol import three_level as tl
from chaincontrol.model import ChainSystem, ContractError
from chaincontrol.propagator import propagate_polar


def three(k=1.0, A=1.0, T=5.0, n=32):
    return o.DiscretizedControlProblem(ChainSystem.three_level(k, A), T, n)


def four(k=1.0, A=1.0, T=5.0, n=32, free=False):
    return o.DiscretizedControlProblem(ChainSystem.four_level(k, A), T, n, free_couplings=free)


# --- objective --------------------------------------------------------------


@pytest.mark.parametrize("make", [three, four, lambda: four(free=True)])
def test_objective_matches_ode_propagation(make, rng):
    # exact expm products against an adaptive integration of the same schedule
    p = make()
    lo, hi = p.lower_upper()
    x = (lo + (hi - lo) * rng.random(lo.shape)).ravel()
    ode = propagate_polar(p.sys, p.to_schedule(x), tol=1e-12).efficiency
    assert p.objective(x) == pytest.approx(ode, abs=1e-9)


def test_objective_batch_agrees_with_single(rng):
    p = three(n=8)
    X = rng.random((5, 8, 1))
    batch = p.objective_batch(X)
    assert np.allclose(batch, [p.objective(x) for x in X], atol=1e-15)


@pytest.mark.parametrize("make", [three, lambda: four(n=12), lambda: four(n=6, free=True)])
def test_gradient_against_scipy_differences(make, rng):
    p = make()
    lo, hi = p.lower_upper()
    x = (lo + (hi - lo) * rng.uniform(0.1, 0.9, lo.shape)).ravel()
    ref = approx_fprime(x, p.objective, 1e-7)
    assert np.allclose(p.gradient(x), ref, atol=2e-6)


def test_problem_contracts():
    with pytest.raises(ContractError):
        three(n=0)
    with pytest.raises(ContractError):
        three(T=0.0)
    with pytest.raises(ContractError):
        three().sample(lambda t: [1.0], rule="simpson")


def test_sample_rules():
    p = three(T=2.0, n=4)
    assert np.allclose(p.sample(lambda t: [t / 2]), [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(p.sample(lambda t: [t * t / 4], rule="average"),
                       [((b ** 3 - a ** 3) / 12) / 0.5 for a, b in
                        [(0, .5), (.5, 1), (1, 1.5), (1.5, 2)]])
    assert np.all(p.sample(lambda t: [3.0]) == 1.0)


# --- random search ----------------------------------------------------------


def test_search_is_deterministic():
    p = three(n=16)
    a = o.random_search(p, 300, seed=11)
    b = o.random_search(p, 300, seed=11)
    c = o.random_search(p, 300, seed=11, workers=4, chunk=37)
    assert np.array_equal(a.efficiencies, b.efficiencies)
    assert np.array_equal(a.efficiencies, c.efficiencies)
    assert a.best_index == c.best_index
    assert not np.array_equal(a.efficiencies, o.random_search(p, 300, seed=12).efficiencies)


def test_search_strata_and_admissibility():
    p = four(n=10, free=True)
    r = o.random_search(p, 40, seed=3)
    assert r.strata[:4] == o.STRATA
    lo, hi = (np.array(b) for b in zip(*p.bounds()))
    assert np.all(r.best_controls >= lo) and np.all(r.best_controls <= hi)
    assert r.best_efficiency == r.efficiencies.max()
    assert r.best_schedule(p).metadata["kind"] == "oracle"


@pytest.mark.parametrize("k, T", [(1.0, 5.0), (1.0, 10.0), (5.0, 3.0)])
def test_search_stays_below_bound(k, T):
    p = three(k=k, T=T, n=16)
    assert o.random_search(p, 1000, seed=0).best_efficiency <= tl.efficiency_bound(k, 1.0, T) + 1e-12


def test_lossless_search_nearly_complete():
    p = three(k=0.0, T=2.0, n=16)
    assert o.random_search(p, 1000, seed=0).best_efficiency >= 0.98


def test_four_level_search_below_bound():
    r = o.random_search(four(n=16, free=True), 1000, seed=0)
    assert r.best_efficiency <= fl.efficiency(1.0, 1.0, 5.0) + 1e-12


# --- ascent -----------------------------------------------------------------


@pytest.mark.parametrize("T", [5.0, 10.0])
def test_ascent_from_rest_reaches_bound(T):
    p = three(T=T, n=64)
    r = o.local_ascent(p, np.zeros(64))
    bound = tl.efficiency_bound(1.0, 1.0, T)
    assert r.efficiency <= bound + 1e-12
    assert bound - r.efficiency < 2e-4


def test_ascent_history_and_admissibility(rng):
    p = four(n=16, free=True)
    lo, hi = (np.array(b) for b in zip(*p.bounds()))
    x0 = lo + (hi - lo) * rng.random(lo.size)
    r = o.local_ascent(p, x0)
    assert all(b >= a - 1e-12 for a, b in zip(r.history, r.history[1:]))
    assert r.efficiency >= r.initial_efficiency and r.improvement >= 0
    assert np.all(r.controls >= lo) and np.all(r.controls <= hi)
    assert r.efficiency == pytest.approx(p.objective(r.controls), abs=1e-15)


def test_ascent_never_returns_worse_start():
    # from the optimum itself an ascent can only stall
    p = three(T=5.0, n=16)
    best = o.local_ascent(p, np.full(16, 0.5))
    again = o.local_ascent(p, best.controls)
    assert again.efficiency >= best.efficiency


def test_ascent_contracts():
    p = three(n=4)
    with pytest.raises(ContractError):
        o.local_ascent(p, np.zeros(3))
    with pytest.raises(ContractError):
        o.local_ascent(p, np.full(4, 1.5))


def test_four_level_ascent_below_asymptote():
    for free in (False, True):
        p = four(T=20.0, n=32, free=free)
        m = len(p.channels)
        r = o.local_ascent(p, np.full(32 * m, 0.5))
        assert r.efficiency <= fl.efficiency(1.0, 1.0, 20.0) + 1e-4
        assert r.efficiency <= math.sqrt(2) - 1 + 1e-3


def test_free_couplings_do_not_help():
    # lowering the bounded coupling below its cap never beats the analytic value
    e_fixed = o.local_ascent(four(n=32), np.full(64, 0.5)).efficiency
    p = four(n=32, free=True)
    e_free = o.local_ascent(p, np.tile([0.5, 0.5, 0.5], 32)).efficiency
    assert e_free <= fl.efficiency(1.0, 1.0, 5.0) + 1e-6
    assert abs(e_free - e_fixed) < 1e-3


# --- refinement -------------------------------------------------------------


def test_refinement_monotone_below_bound():
    bound = tl.efficiency_bound(1.0, 1.0, 5.0)
    rep = o.refine_and_extrapolate(three(), [16, 32, 64], bound=bound)
    assert rep.monotone
    assert all(e <= bound + 1e-12 for e in rep.efficiencies)
    assert all(g >= -1e-12 for g in rep.gaps)
    assert rep.gaps[-1] < rep.gaps[0]
    d = rep.to_dict()
    assert d["segments"] == [16, 32, 64] and d["monotone"]


def test_refinement_lossless_converges_to_one():
    rep = o.refine_and_extrapolate(three(k=0.0, T=2.0), [16, 32, 64])
    assert all(abs(1 - e) < 1e-9 for e in rep.efficiencies)


def test_refinement_non_nested_grids():
    rep = o.refine_and_extrapolate(three(), [12, 20])
    assert rep.efficiencies[1] >= rep.efficiencies[0] - 1e-6


def test_refinement_contracts():
    with pytest.raises(ContractError):
        o.refine_and_extrapolate(three(), [32, 16])
    with pytest.raises(ContractError):
        o.upsample(np.zeros(3), 3, 4, 1)
    assert np.array_equal(o.upsample(np.array([1.0, 2.0]), 2, 4, 1), [1, 1, 2, 2])
