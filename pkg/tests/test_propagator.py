import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from chaincontrol import three_level as tl
from chaincontrol.model import (
    DECAY_SCALE,
    ChainSystem,
    ContractError,
    ControlSchedule,
    Kick,
    build_real_generator,
    constant_schedule,
    to_polar,
)
from chaincontrol.propagator import (
    AngleControl,
    ControlTooStiffError,
    apply_kick,
    propagate,
    propagate_piecewise,
    propagate_polar,
    reconstruct_full_controls,
    rescale_time,
)


def const3(k, p, s, T, A=1.0):
    return ChainSystem.three_level(k, A), constant_schedule(T, 1, {"pump": [p], "stokes": [s]})


def test_rabi_half_flip():
    p = 0.8
    sys, sched = const3(0.0, p, 0.0, math.pi / (2 * p))
    x = propagate(sys, sched, [1, 0, 0], tol=1e-10).final
    assert np.allclose(x, [0, 1, 0], atol=1e-9)


def test_pure_decay():
    sys, sched = const3(1.0, 0.0, 0.0, 1.0)
    x = propagate(sys, sched, [0, 1, 0], tol=1e-10).final
    assert np.allclose(x, [0, math.exp(-1), 0], atol=1e-10)


def test_final_state_at_horizon_and_samples():
    sys, sched = const3(0.5, 1.0, 1.0, 2.0)
    tr = propagate(sys, sched, [1, 0, 0], tol=1e-9, t_eval=[0.3, 1.1])
    assert tr.times.tolist() == [0.3, 1.1, 2.0]
    oracle = expm(build_real_generator(sys, [1.0, 1.0]) * 1.1) @ [1, 0, 0]
    assert np.allclose(tr.dense(1.1), oracle, atol=1e-9)
    assert np.allclose(tr.states[1], oracle, atol=1e-9)


@given(st.integers(3, 6), st.integers(1, 6), st.integers(0, 10_000), st.booleans())
def test_piecewise_constant_against_matrix_exponentials(n, nseg, seed, lossless):
    rng = np.random.default_rng(seed)
    k = (0.0,) + tuple(0.0 if lossless else v for v in rng.uniform(0, 2, n - 2)) + (0.0,)
    sys = ChainSystem(n, k, 1.0)
    vals = rng.uniform(-2, 2, (nseg, n - 1))
    T = float(rng.uniform(0.5, 3))
    sched = constant_schedule(T, nseg, {c: vals[:, i] for i, c in enumerate(sys.channels)})
    x0 = np.zeros(n)
    x0[0] = 1.0
    tr = propagate(sys, sched, x0, tol=1e-10, t_eval=np.linspace(0, T, 40))
    gens = np.stack([build_real_generator(sys, v) for v in vals])
    ref = propagate_piecewise(gens, T / nseg, x0)[-1]
    assert np.allclose(tr.final, ref, atol=1e-8)
    assert np.all(np.diff(tr.norm) <= 1e-9)
    if lossless:
        assert np.allclose(tr.norm, 1.0, atol=1e-8)
    assert np.allclose(tr.populations.sum(axis=1), tr.norm ** 2)


def test_norm_decay_rate_matches_losses():
    # d|x|^2/dt = -2 sum k_i x_i^2, checked by central differences on dense output
    sys = ChainSystem(4, (0, 0.7, 1.3, 0), 1.0)
    sched = ControlSchedule(np.linspace(0, 3, 4), {"pump": [0, 1, 2, 1], "inter": [1, 1, 1, 1],
                                                   "stokes": [2, 1, 0, 0]})
    tr = propagate(sys, sched, [1, 0, 0, 0], tol=1e-11)
    k = np.asarray(sys.decay_rates)
    h = 1e-5
    for t in np.linspace(0.2, 2.8, 9):
        lhs = (np.sum(tr.dense(t + h) ** 2) - np.sum(tr.dense(t - h) ** 2)) / (2 * h)
        assert lhs == pytest.approx(-2 * np.sum(k * tr.dense(t) ** 2), abs=1e-6)


def test_tolerance_refinement_reduces_error():
    sys = ChainSystem.three_level(1.0, 1.0)
    sched = ControlSchedule(np.linspace(0, 4, 5), {"pump": [0, 2, 1, 3, 0], "stokes": [1] * 5})
    errs = []
    ref = propagate(sys, sched, [1, 0, 0], tol=1e-13).final
    for tol in (1e-4, 1e-6, 1e-8):
        errs.append(np.max(np.abs(propagate(sys, sched, [1, 0, 0], tol=tol).final - ref)))
    assert errs[0] > errs[1] > errs[2]


def test_contracts():
    sys, sched = const3(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ContractError):
        propagate(sys, sched, [1, 0, 0], tol=1e-2)
    with pytest.raises(ContractError):
        propagate(sys, sched, [1, 0, 0], T=2.0)
    with pytest.raises(ContractError):
        propagate(sys, sched, [1, 0], tol=1e-8)
    with pytest.raises(ContractError):
        propagate(sys, constant_schedule(1, 1, {"pump": [1]}), [1, 0, 0])


def test_control_too_stiff_names_the_time():
    sys = ChainSystem.three_level(1.0, 1.0)
    ev = lambda t: {"pump": 1.0 / (0.5 - t) ** 2 if t < 0.5 else 0.0, "stokes": 0.0}
    sched = ControlSchedule([0.0, 1.0], {"pump": [0, 0], "stokes": [0, 0]}, evaluator=ev)
    with pytest.raises(ControlTooStiffError) as info:
        propagate(sys, sched, [1, 0, 0], tol=1e-8, max_amplitude=1e4)
    assert 0.49 <= info.value.time < 0.5
    bad = ControlSchedule([0.0, 1.0], {"pump": [0, 0], "stokes": [0, 0]},
                          evaluator=lambda t: {"pump": math.nan, "stokes": 0.0})
    with pytest.raises(ControlTooStiffError):
        propagate(sys, bad, [1, 0, 0])


def test_kick_rotation_and_schedule_kicks():
    sys = ChainSystem.three_level(0.0, 1.0)
    assert np.allclose(apply_kick(np.array([1.0, 0, 0]), sys, Kick(0, "pump", math.pi / 2)),
                       [0, 1, 0])
    sched = ControlSchedule([0.0, 1.0], {"pump": [0, 0], "stokes": [0, 0]},
                            kicks=(Kick(0.5, "stokes", math.pi / 2),))
    tr = propagate(sys, sched, [0, 1, 0], tol=1e-10, t_eval=[0.25, 0.5, 0.75])
    assert np.allclose(tr.states[1], [0, 0, 1])
    assert np.allclose(tr.final, [0, 0, 1])


def test_csv_export():
    sys, sched = const3(1.0, 1.0, 1.0, 1.0)
    text = propagate(sys, sched, [1, 0, 0], t_eval=[0.5]).to_csv()
    lines = text.splitlines()
    assert lines[0] == "time,x1,x2,x3,p1,p2,p3,norm"
    assert len(lines) == 3
    row = [float(v) for v in lines[1].split(",")]
    assert row[7] ** 2 == pytest.approx(sum(row[4:7]))


# --- polar ------------------------------------------------------------------


def polar_u(T, u, n=2):
    return ControlSchedule(np.linspace(0, T, n), {"u": np.full(n, u)})


def test_polar_constant_u_matches_damped_rotation():
    k, A, T = 1.0, 1.0, 0.8
    r = propagate_polar(ChainSystem.three_level(k, A), polar_u(T, 1.0)).r[-1]
    assert np.allclose(r, expm(np.array([[-k, -A], [A, 0]]) * T) @ [1, 0], atol=1e-10)
    small = propagate_polar(ChainSystem.three_level(k, A), polar_u(1e-3, 1.0)).efficiency
    assert small == pytest.approx(A * 1e-3, rel=1e-3)


def test_polar_zero_control_is_frozen():
    tr = propagate_polar(ChainSystem.three_level(1.0, 1.0), polar_u(3.0, 0.0), r0=[0.6, 0.8])
    assert np.allclose(tr.r[-1], [0.6, 0.8], atol=1e-14)


def test_polar_four_level_case_one():
    T = math.atan2(1, 2)
    sched = ControlSchedule([0, T], {"u1": [1, 1], "u2": [1, 1]})
    eff = propagate_polar(ChainSystem.four_level(1, 1), sched).efficiency
    assert eff == pytest.approx(math.exp(-T) * math.sin(T), abs=1e-10)
    assert eff == pytest.approx(0.28125, abs=5e-5)


def test_polar_rejects_u_outside_unit_interval():
    with pytest.raises(ContractError):
        propagate_polar(ChainSystem.three_level(1, 1), polar_u(1.0, 1.2))
    ev = lambda t: {"u": 2.0 * t}
    sched = ControlSchedule([0.0, 1.0], {"u": [0.0, 0.9]}, evaluator=ev)
    with pytest.raises(ContractError):
        propagate_polar(ChainSystem.three_level(1, 1), sched)


@settings(max_examples=15)
@given(st.floats(0, 3), st.floats(0.2, 2), st.integers(0, 10_000))
def test_polar_agrees_with_full_space(k, A, seed):
    # smooth u(t) in (0, 1): rebuild the pump and propagate the full chain
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.1, 0.45), rng.uniform(0.0, 0.4), rng.uniform(0.2, 3.0)
    # keep the rotation short of emptying the bright state
    T = float(rng.uniform(0.5, 4.0)) * min(1.0, 0.35 / (A * (a + b)))
    u = lambda t: a + b * math.sin(c * t) ** 2
    du = lambda t: b * c * math.sin(2 * c * t)
    sys = ChainSystem.three_level(k, A)
    sched = ControlSchedule(np.linspace(0, T, 3), {"u": [u(t) for t in np.linspace(0, T, 3)]},
                            evaluator=lambda t: {"u": u(t)})
    polar = propagate_polar(sys, sched, tol=1e-11)
    pulses = reconstruct_full_controls(sys, polar, [AngleControl("pump", u, du)], n_samples=11)
    full = propagate(sys, pulses, [1, 0, 0], tol=1e-11, t_eval=np.linspace(0, T, 9))
    for t, x in zip(full.times, full.states):
        p = to_polar(x)
        assert p.r1 == pytest.approx(polar.dense(t)[0], abs=1e-6)
        assert p.r2 == pytest.approx(polar.dense(t)[1], abs=1e-6)


# --- reconstruction ---------------------------------------------------------


@pytest.fixture(scope="module")
def optimum_t10():
    sol = tl.optimal_u(1.0, 1.0, 10.0)
    sys = ChainSystem.three_level(1.0, 1.0)
    polar = propagate_polar(sys, sol.u_schedule(401), tol=1e-11)
    pulses = reconstruct_full_controls(sys, polar, sol.angle_controls(), n_samples=401)
    return sol, sys, polar, pulses


def test_optimal_u_reaches_bound_in_polar_form(optimum_t10):
    sol, _, polar, _ = optimum_t10
    assert polar.efficiency == pytest.approx(sol.efficiency, abs=1e-4)
    assert polar.efficiency == pytest.approx(sol.efficiency, abs=1e-9)


def test_reconstructed_pulses_reproduce_polar_trajectory(optimum_t10):
    sol, sys, polar, pulses = optimum_t10
    tr = propagate(sys, pulses, [1, 0, 0], tol=1e-10, t_eval=np.linspace(0, 10, 41))
    for t, x in zip(tr.times, tr.states):
        p = to_polar(x)
        assert p.r1 == pytest.approx(polar.dense(t)[0], abs=1e-6)
        assert p.r2 == pytest.approx(polar.dense(t)[1], abs=1e-6)
    assert tr.final[2] == pytest.approx(sol.efficiency, abs=1e-7)


def test_pump_matches_closed_form_and_dark_ratio(optimum_t10):
    sol, _, polar, pulses = optimum_t10
    for t in (0.0, 1.0, 4.0, 8.0):
        assert pulses.at(t)["pump"] == pytest.approx(sol.omega_p_closed_form(t), rel=1e-6)
        assert pulses.at(t)["stokes"] == 1.0


def test_dark_ratio_in_long_horizon_limit():
    # Omega_p/Omega_s - r2/r1 is of relative size k/(A^2 t): it fades like 1/T
    devs = []
    for T in (10.0, 100.0, 1000.0):
        sol = tl.optimal_u(1.0, 1.0, T)
        t = 0.5 * T
        r1, r2 = sol.state(t)
        devs.append(abs(sol.omega_p_closed_form(t) / sol.A / (r2 / r1) - 1.0))
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 5e-3
    assert devs[1] / devs[2] == pytest.approx(10.0, rel=0.2)


def test_switched_segment_is_flagged(optimum_t10):
    sol, _, _, pulses = optimum_t10
    (a, b), = pulses.unbounded["pump"]
    assert a <= sol.tau and b == sol.T
    assert pulses.is_unbounded("pump", 0.5 * (sol.tau + sol.T))
    assert not np.any(pulses.values["pump"][pulses.unbounded_mask("pump")])
    assert [q.channel for q in pulses.kicks] == ["pump", "pump"]


def test_bright_state_depleted():
    sys = ChainSystem.three_level(1.0, 1.0)
    sol = tl.optimal_u(1.0, 1.0, 5.0)
    polar = propagate_polar(sys, sol.u_schedule(), r0=[0.0, 1.0])
    with pytest.raises(ContractError, match="depleted"):
        reconstruct_full_controls(sys, polar, sol.angle_controls())


# --- rescaling --------------------------------------------------------------


def test_rescale_identity_below_bound():
    sched = constant_schedule(2.0, 2, {"pump": [0.5, 1.0], "stokes": [1.0, 1.0]})
    out = rescale_time(sched, 1.0)
    assert out.duration == 2.0
    assert np.allclose(out.schedule.values["pump"], sched.values["pump"])


def test_rescale_stretches_strong_segment():
    sched = constant_schedule(2.0, 2, {"pump": [2.0, 1.0], "stokes": [1.0, 1.0]})
    out = rescale_time(sched, 1.0)
    assert out.duration == pytest.approx(3.0)
    s = out.schedule
    assert s.at(0.5)["pump"] == 1.0 and s.at(0.5)["stokes"] == 0.5
    assert s.at(0.5)[DECAY_SCALE] == 0.5
    sys = ChainSystem.three_level(0.7, 1.0)
    before = propagate(sys, sched, [1, 0, 0], tol=1e-11).final
    after = propagate(sys, s, [1, 0, 0], tol=1e-11).final
    assert np.allclose(before, after, atol=1e-9)


def test_rescale_lossless_preserves_efficiency():
    ev = lambda t: {"pump": 3.0 * math.sin(t) ** 2, "stokes": 1.0}
    sched = ControlSchedule(np.linspace(0, 3, 31), {"pump": [ev(t)["pump"] for t in np.linspace(0, 3, 31)],
                                                    "stokes": np.ones(31)}, evaluator=ev)
    sys = ChainSystem.three_level(0.0, 1.0)
    out = rescale_time(sched, 1.0)
    assert max(abs(out.schedule.at(t)["pump"]) for t in np.linspace(0, out.duration, 200)) <= 1 + 1e-9
    before = propagate(sys, sched, [1, 0, 0], tol=1e-11).final
    after = propagate(sys, out.schedule, [1, 0, 0], tol=1e-11).final
    assert after[2] == pytest.approx(before[2], abs=1e-7)
