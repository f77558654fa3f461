import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from chaincontrol import three_level as tl
from chaincontrol.model import ChainSystem, ContractError, from_real
from chaincontrol.propagator import propagate, propagate_polar

pos = st.floats(0.05, 20)


def costate_oracle(k, A, s):
    # lambda' = -M^T lambda under u = 1, run back a time s from (0, 1)
    M = np.array([[-k, -A], [A, 0.0]])
    return expm(M.T * s) @ np.array([0.0, 1.0])


# --- adjoint ----------------------------------------------------------------


def test_adjoint_terminal_value():
    for k in (0.5, 2.0, 5.0):
        l1, l2 = tl.backward_adjoint(k, 1.0, 3.0)(3.0)
        assert (l1, l2) == (0.0, 1.0)


def test_adjoint_lossless_is_rotation():
    ad = tl.backward_adjoint(0.0, 1.3, 2.0)
    t = np.linspace(0, 2, 7)
    l1, l2 = ad(t)
    assert np.allclose(l1, np.sin(1.3 * (2 - t)), atol=1e-14)
    assert np.allclose(l2, np.cos(1.3 * (2 - t)), atol=1e-14)


def test_adjoint_critically_damped():
    A, T = 1.0, 4.0
    t = np.linspace(0, T, 9)
    l1, _ = tl.backward_adjoint(2.0, A, T)(t)
    assert np.allclose(l1, A * (T - t) * np.exp(-A * (T - t)), atol=1e-14)


@given(st.floats(0, 10), st.floats(0.1, 5), st.floats(0, 4))
def test_adjoint_matches_matrix_exponential(k, A, s):
    l1, l2 = tl.backward_adjoint(k, A, s)(0.0)
    ref = costate_oracle(k, A, s)
    assert float(l1) == pytest.approx(ref[0], abs=1e-10)
    assert float(l2) == pytest.approx(ref[1], abs=1e-10)


# --- critical time ----------------------------------------------------------


def test_critical_time_strong_decay_value():
    assert tl.critical_time(10.0, 10.0) == pytest.approx(0.06, abs=0.005)


def test_critical_time_closed_form_value():
    expect = math.log((43 + 9 * math.sqrt(5)) / 38) / math.sqrt(5)
    assert tl.critical_time(3.0, 1.0) == pytest.approx(expect, rel=1e-14)
    assert tl.critical_time(3.0, 1.0, method="root") == pytest.approx(expect, abs=1e-12)


@given(pos, pos)
def test_critical_time_defining_property(k, A):
    TM = tl.critical_time(k, A)
    assert 0 < TM < math.inf
    assert tl.backward_adjoint(k, A, TM).ratio(0.0) == pytest.approx(2 * k / A, rel=1e-10)


@given(st.floats(0.1, 10), st.floats(2.05, 20))
def test_critical_time_routes_agree(A, ratio):
    k = ratio * A
    closed = tl.critical_time(k, A, method="closed")
    root = tl.critical_time(k, A, method="root")
    assert closed == pytest.approx(root, abs=1e-8)


def test_critical_time_contracts():
    with pytest.raises(ContractError):
        tl.critical_time(-1, 1)
    with pytest.raises(ContractError):
        tl.critical_time(1, 1, method="closed")
    with pytest.raises(ContractError):
        tl.critical_time(1, 1, method="newton")


# --- switching time ---------------------------------------------------------


def test_no_switch_below_critical_time():
    TM = tl.critical_time(1, 1)
    assert tl.switching_time(1, 1, 0.9 * TM) is None
    sol = tl.optimal_u(1, 1, 0.9 * TM)
    assert sol.case == tl.SHORT_TIME and sol.tau == sol.T


def test_switch_near_case_boundary():
    TM = tl.critical_time(1, 1)
    taus = [tl.switching_time(1, 1, TM + eps) for eps in (1e-2, 1e-4, 1e-6)]
    assert taus[0] > taus[1] > taus[2] > 0
    assert taus[2] < 1e-5


def test_switch_long_horizon():
    TM = tl.critical_time(1, 1)
    for T in (10, 100, 1000):
        tau = tl.switching_time(1, 1, T)
        assert 0 < T - tau <= TM
    assert tl.switching_time(1, 1, 1000) / 1000 > 0.9999


def forward_costates(sol):
    # a = lambda2/lambda1, b = r2/r1 under u = (A/2k)(a - b), from a(0) = 2k u(0)/A, b(0) = 0
    k, A = sol.k, sol.A

    def rhs(t, y):
        a, b = y
        u = A / (2 * k) * (a - b)
        return [A * u * (1 + a * a) - k * u * u * a, A * u * (1 + b * b) + k * u * u * b]
    return solve_ivp(rhs, (0, sol.tau), [2 * k * sol.u0 / A, 0.0], method="DOP853",
                     rtol=1e-13, atol=1e-15, dense_output=True)


@pytest.mark.parametrize("k, A, T", [(1, 1, 10), (0.3, 2, 4), (5, 1, 3)])
def test_pontryagin_arc(k, A, T):
    sol = tl.optimal_u(k, A, T)
    assert sol.case == tl.SWITCHED
    fw = forward_costates(sol)
    t = np.linspace(0, sol.tau, 200)
    a, b = fw.sol(t)
    assert np.allclose(A / (2 * k) * (a - b), sol.u(t), atol=1e-8)
    assert np.allclose((a + b) / (a - b), A * A / k * t + 1, atol=1e-8)
    assert np.all(np.diff(a - b) >= -1e-12)
    # the arc ends where a - b reaches 2k/A, i.e. u = 1
    assert (a - b)[-1] == pytest.approx(2 * k / A, rel=1e-8)
    assert a[-1] == pytest.approx(A * sol.tau + 2 * k / A, rel=1e-8)
    assert b[-1] == pytest.approx(A * sol.tau, rel=1e-8)


# --- optimal control --------------------------------------------------------


@given(st.floats(0.05, 5), st.floats(0.2, 3), st.floats(0.1, 30))
def test_optimal_u_shape(k, A, T):
    sol = tl.optimal_u(k, A, T)
    t = np.linspace(0, T, 301)
    u = sol.u(t)
    assert np.all((u > 0) & (u <= 1))
    assert np.all(np.diff(u) >= -1e-15)
    assert float(sol.u(sol.tau)) == 1.0
    assert sol.T - sol.tau <= sol.T_M + 1e-12
    if sol.case == tl.SWITCHED:
        expect = 1 / math.sqrt(A * A * sol.tau ** 2 + 2 * k * sol.tau + 1)
        assert sol.u0 == pytest.approx(expect, rel=1e-14)


def test_dark_state_at_start_for_long_horizon():
    sol = tl.optimal_u(1, 1, 200)
    assert sol.u0 < 0.006
    r1, r2 = sol.state(0.0)
    assert r1 * sol.u0 < 0.006


@pytest.mark.parametrize("k, A, T", [(1, 1, 0.3), (1, 1, 10), (5, 1, 3), (0.2, 2, 6), (2, 1, 7)])
def test_efficiency_against_polar_integration(k, A, T):
    sol = tl.optimal_u(k, A, T)
    eff = propagate_polar(ChainSystem.three_level(k, A), sol.u_schedule(), tol=1e-12).efficiency
    assert eff == pytest.approx(sol.efficiency, abs=1e-9)
    assert sol.state(T)[1] == pytest.approx(sol.efficiency, abs=1e-12)


def test_efficiency_short_horizon_is_damped_rotation():
    k, A = 1.0, 1.0
    T = 0.5 * tl.critical_time(k, A)
    r = expm(np.array([[-k, -A], [A, 0.0]]) * T) @ [1.0, 0.0]
    assert tl.efficiency_bound(k, A, T) == pytest.approx(r[1], abs=1e-14)


def test_efficiency_lossless():
    A = 1.5
    for T in (0.2, 0.8, math.pi / (2 * A), 3.0):
        assert tl.efficiency_bound(0.0, A, T) == pytest.approx(math.sin(A * min(T, math.pi / (2 * A))))
    assert tl.efficiency_bound(0.0, A, math.pi / (2 * A)) == pytest.approx(1.0, abs=1e-15)
    sol = tl.optimal_u(0.0, A, 3.0)
    assert sol.case == tl.LOSSLESS
    eff = propagate_polar(ChainSystem.three_level(0.0, A), sol.u_schedule(), tol=1e-12).efficiency
    assert eff == pytest.approx(1.0, abs=1e-10)


def test_efficiency_sequence_k1():
    effs = [tl.efficiency_bound(1, 1, T) for T in (2, 5, 10, 20)]
    assert effs == sorted(effs)
    assert effs == pytest.approx([0.69869, 0.84394, 0.91265, 0.95343], abs=5e-6)
    assert all(e < 1 for e in effs)
    assert tl.efficiency_bound(1, 1, 1e4) > 0.999


@given(st.floats(0.05, 5), st.floats(0.2, 3), st.floats(0.1, 30), st.floats(1.0, 2.0))
def test_efficiency_monotone(k, A, T, f):
    assert tl.efficiency_bound(k, A, T * f) >= tl.efficiency_bound(k, A, T) - 1e-12
    assert tl.efficiency_bound(k * f, A, T) <= tl.efficiency_bound(k, A, T) + 1e-12


@pytest.mark.parametrize("k, A, T", [(1, 1, 10), (5, 1, 3), (0.4, 2, 8)])
def test_control_maximises_hamiltonian(k, A, T, rng):
    sol = tl.optimal_u(k, A, T)
    grid = np.linspace(0, 1, 10001)
    for t in rng.uniform(0, T, 100):
        r = sol.state(t)
        lam = (1.0, tl.costate_ratio(sol, t))
        H = tl.hamiltonian(grid, k, A, r, lam)
        h_star = float(tl.hamiltonian(sol.u(t), k, A, r, lam))
        assert h_star >= H.max() - 1e-10 * max(1.0, abs(H.max()))


# --- adiabatic pulses -------------------------------------------------------


def test_stirap_beta_zero_leaves_ground_state():
    s = tl.stirap_limit_pulses(1, 1, 50, beta=0.0)
    assert not np.any(s.values["pump"])
    tr = propagate(ChainSystem.three_level(1, 1), s, [1, 0, 0])
    assert np.allclose(tr.final, [1, 0, 0])


@pytest.mark.parametrize("beta", [math.pi / 6, math.pi / 4, math.pi / 3])
def test_fractional_transfer_superposition(beta):
    s = tl.stirap_limit_pulses(1, 1, 400, beta=beta)
    x = propagate(ChainSystem.three_level(1, 1), s, [1, 0, 0], tol=1e-9).final
    psi = from_real(x)
    # target cos(beta)|1> - sin(beta)|3> up to the slow loss
    assert psi[2].real / psi[0].real == pytest.approx(-math.tan(beta), rel=5e-3)
    assert abs(psi[1]) < 0.01


def test_stirap_pulse_layout():
    s = tl.stirap_limit_pulses(1, 2, 100, edge_width=5.0, phi=0.5)
    assert s.metadata["phi"] == 0.5
    assert np.all(s.values["stokes"] <= 2.0)
    assert s.at(0.0)["stokes"] == 0.0 and s.at(5.0)["stokes"] == 2.0
    assert s.is_unbounded("pump", 99.9999999)
    assert s.bounds == {"pump": None, "stokes": 2.0}


def test_stirap_contracts():
    with pytest.raises(ContractError):
        tl.stirap_limit_pulses(1, 1, 10, beta=2.0)
    with pytest.raises(ContractError):
        tl.stirap_limit_pulses(1, 1, 10, phi=4.0)
    with pytest.raises(ContractError):
        tl.optimal_u(1, 1, 0)
