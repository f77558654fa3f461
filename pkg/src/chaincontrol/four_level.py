"""Optimal transfer through two consecutive decaying levels.

Both intermediates decay at rate ``k`` and the middle coupling is held at
its bound ``A``.  With ``u1 = cos(theta1)``, ``u2 = cos(theta2)`` the
reduced radii obey::

    r1' = -k u1^2 r1 - A u1 u2 r2,    r2' = A u1 u2 r1 - k u2^2 r2.

Short horizons (case I) keep ``u1 = u2 = 1``.  Longer ones (case II) split
into a pump phase on ``[0, tau]``, a hold on ``[tau, T - tau]`` and a
mirrored Stokes phase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import ChainSystem, ContractError, ControlSchedule
from .propagator import AngleControl

CASE_I = "I"
CASE_II = "II"
LOSSLESS = "lossless"


class RootBracketError(ArithmeticError):
    """The switching-time residual has no sign change on ``[0, T/2]``."""


def _check(k, A, T=None):
    if k < 0 or A <= 0 or (T is not None and T <= 0):
        raise ContractError("need k >= 0, A > 0, T > 0")


def asymptotic_efficiency(xi: float) -> float:
    """Infinite-time optimum ``sqrt(1 + xi^2) - xi``."""
    if xi < 0:
        raise ContractError("xi must be non-negative")
    # same value, no cancellation for large xi
    return 1.0 / (math.hypot(1.0, xi) + xi)


def case_threshold(k: float, A: float) -> float:
    """Horizon ``arccot(2 xi)/A`` separating the two cases."""
    _check(k, A)
    return math.atan2(1.0, 2.0 * k / A) / A


def classify_case(k: float, A: float, T: float) -> str:
    _check(k, A, T)
    return CASE_I if T <= case_threshold(k, A) else CASE_II


def case1_efficiency(k: float, A: float, T: float) -> float:
    """``exp(-k T) sin(A T)`` for ``u1 = u2 = 1`` throughout."""
    _check(k, A, T)
    return math.exp(-k * T) * math.sin(A * T)


def kappa(xi: float, z: float) -> float:
    """``kappa`` at scaled switching time ``z = A tau``.

    ``1 + 2 xi^2 - 2 xi s coth(s z + 2 asinh(xi))`` with ``s = sqrt(1 + xi^2)``,
    rewritten through ``coth(y) = 1 + 2 e^(-2y)/(1 - e^(-2y))`` so that large
    ``z`` neither overflows nor cancels.
    """
    s = math.hypot(1.0, xi)
    eta = 1.0 / (s + xi)
    y = s * z + 2.0 * math.asinh(xi)
    if y == 0.0:
        return -math.inf
    e = math.exp(-2.0 * y)
    return eta * eta - 4.0 * xi * s * e / -math.expm1(-2.0 * y)


def gammas(xi: float, z: float) -> tuple[float, float, float]:
    """``(gamma1, gamma2, kappa)`` at scaled switching time ``z``."""
    kap = kappa(xi, z)
    g1 = math.atan2(2.0 * xi * kap, 1.0 - kap)
    g2 = math.atan2(1.0 - kap, 2.0 * xi)
    return g1, g2, kap


def _residual(xi: float, A: float, T: float, tau: float) -> float:
    g1, g2, _ = gammas(xi, A * tau)
    return T - 2.0 * tau - (g2 - g1) / A


def _solve_tau(xi: float, A: float, T: float) -> float:
    f = lambda tau: _residual(xi, A, T, tau)
    lo, hi = 0.0, 0.5 * T
    flo, fhi = f(lo), f(hi)
    if fhi >= 0.0:
        # hold phase shorter than double rounding
        return hi
    if flo <= 0.0:
        raise RootBracketError(f"no sign change: f(0)={flo!r}, f(T/2)={fhi!r}")
    probe = np.linspace(lo, hi, 9)
    vals = [f(t) for t in probe]
    if np.all(np.diff(vals) <= 1e-12 * (1.0 + abs(flo))):
        return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # not monotone on the probe grid: bisect the first sign change
    for a, b, fa, fb in zip(probe[:-1], probe[1:], vals[:-1], vals[1:]):
        if fa > 0.0 >= fb:
            return brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    raise RootBracketError("residual sign change lost during scan")


def _phase1_rhs(k: float, A: float):
    xi = k / A

    def rhs(t, y):
        a, b = y
        u = (a - b) / (2.0 * xi)
        w = k * (1.0 - u * u)
        return [A * u * (1.0 + a * a) + w * a, A * u * (1.0 + b * b) - w * b]

    return rhs


@dataclass(frozen=True, eq=False)
class FourLevelSolution:
    """Optimal mixing cosines, switching data and predicted efficiencies."""

    k: float
    A: float
    T: float
    case: str
    tau: float
    gamma1: float
    gamma2: float
    kappa: float
    efficiency: float
    efficiency_infinite: float
    # phase-1 costate ratios (a, b) on [0, tau]
    phase1: Callable[[float], np.ndarray] | None = field(default=None, repr=False)
    # relative mismatch of b(tau) against tan(gamma1)
    b_tau_residual: float = 0.0

    @property
    def xi(self) -> float:
        return self.k / self.A

    @property
    def hold(self) -> tuple[float, float]:
        return (self.tau, self.T - self.tau)

    def _u_phase1(self, t: float) -> float:
        a, b = self.phase1(t)
        return min(max((a - b) / (2.0 * self.xi), 0.0), 1.0)

    def _du_phase1(self, t: float) -> float:
        a, b = self.phase1(t)
        u = min(max((a - b) / (2.0 * self.xi), 0.0), 1.0)
        return 0.5 * self.A * (a + b) * (1.0 + u * u)

    def u1(self, t: float) -> float:
        if self.case == LOSSLESS:
            return math.sqrt(math.pi / (2.0 * self.A * self.T))
        if self.case == CASE_I or t >= self.tau:
            return 1.0
        return self._u_phase1(max(t, 0.0))

    def du1(self, t: float) -> float:
        if self.case != CASE_II or t >= self.tau:
            return 0.0
        return self._du_phase1(max(t, 0.0))

    def u2(self, t: float) -> float:
        if self.case == LOSSLESS:
            return self.u1(t)
        if self.case == CASE_I or t <= self.T - self.tau:
            return 1.0
        return self._u_phase1(max(self.T - t, 0.0))

    def du2(self, t: float) -> float:
        if self.case != CASE_II or t <= self.T - self.tau:
            return 0.0
        return -self._du_phase1(max(self.T - t, 0.0))

    def angle_controls(self) -> list[AngleControl]:
        if self.case == LOSSLESS:
            return [AngleControl("pump", self.u1, self.du1, (), False),
                    AngleControl("stokes", self.u2, self.du2, (), False)]
        if self.case == CASE_I:
            pins_p, pins_s = ((0.0, self.T),), ((0.0, self.T),)
        else:
            pins_p, pins_s = ((self.tau, self.T),), ((0.0, self.T - self.tau),)
        return [AngleControl("pump", self.u1, self.du1, pins_p, pinned_unbounded=False),
                AngleControl("stokes", self.u2, self.du2, pins_s, pinned_unbounded=False)]

    def u_schedule(self, n: int = 401) -> ControlSchedule:
        """``(u1, u2)`` as an evaluator-backed schedule, phase edges as breakpoints."""
        t = np.linspace(0.0, self.T, n)
        u1 = np.array([self.u1(s) for s in t])
        u2 = np.array([self.u2(s) for s in t])
        bps = self.hold if self.case == CASE_II else ()
        return ControlSchedule(t, {"u1": u1, "u2": u2}, "linear", {"u1": 1.0, "u2": 1.0},
                               breakpoints=tuple(b for b in bps if 0.0 < b < self.T),
                               evaluator=lambda s: {"u1": self.u1(s), "u2": self.u2(s)},
                               metadata={"kind": "u*", "case": self.case})

    def to_dict(self, n_samples: int = 201) -> dict:
        t = np.linspace(0.0, self.T, n_samples)
        return {
            "k": self.k, "A": self.A, "T": self.T, "xi": self.xi, "case": self.case,
            "tau": self.tau, "gamma1": self.gamma1, "gamma2": self.gamma2,
            "kappa": self.kappa, "efficiency": self.efficiency,
            "efficiency_infinite": self.efficiency_infinite,
            "u_star": {"t": t.tolist(), "u1": [self.u1(s) for s in t],
                       "u2": [self.u2(s) for s in t]},
        }


def _case1_solution(k, A, T) -> FourLevelSolution:
    return FourLevelSolution(k, A, T, CASE_I, T, math.nan, math.nan, math.nan,
                             case1_efficiency(k, A, T), asymptotic_efficiency(k / A))


def _shoot_phase1(k: float, A: float, tau: float, rtol: float):
    """Forward solution of the ``(a, b)`` system with ``b(0) = 0`` and ``u1(tau) = 1``.

    Near the origin the system is a saddle with rates ``+-A sqrt(1 + xi^2)``,
    so integrating backward from ``tau`` loses accuracy like
    ``exp(2 A sqrt(1 + xi^2) tau)``.  Forward runs keep relative accuracy;
    the unknown ``a(0)`` is found on a log scale, where the arrival time is
    close to linear.
    """
    xi = k / A
    lam = A * math.hypot(1.0, xi)
    rhs = _phase1_rhs(k, A)

    def hit(t, y):
        return y[0] - y[1] - 2.0 * xi
    hit.terminal = True
    hit.direction = 1.0

    def run(log_a0, dense=False):
        a0 = math.exp(log_a0)
        horizon = 2.0 * tau + 40.0 / lam
        sol = solve_ivp(rhs, (0.0, horizon), [a0, 0.0], method="DOP853", rtol=rtol,
                        atol=1e-3 * rtol * a0, events=hit, dense_output=dense)
        t_hit = sol.t_events[0][0] if sol.t_events[0].size else math.inf
        return t_hit, sol

    hi = math.log(2.0 * xi) - 1e-15
    lo = hi - 2.0 * lam * tau - 2.0
    while run(lo)[0] <= tau:
        lo -= lam * tau + 2.0
    if lo < math.log(1e-300):
        raise ArithmeticError("phase-1 initial costate underflows; horizon too long")
    log_a0 = brentq(lambda x: run(x)[0] - tau, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                    maxiter=500)
    t_hit, sol = run(log_a0, dense=True)
    return sol.sol, min(t_hit, tau)


def case2_solve(k: float, A: float, T: float, rtol: float = 1e-12) -> FourLevelSolution:
    """Switching time, boundary angles and the phase-1 control.

    ``tau`` solves ``T = 2 tau + (gamma2 - gamma1)/A``.  The pump phase
    ``u1 = (a - b)/(2 xi)`` comes from the Pontryagin system for the costate
    ratios ``(a, b)`` with ``b(0) = 0`` and ``u1(tau) = 1``.  Its end point
    must land on ``b(tau) = tan(gamma1)``; the mismatch is reported as
    ``b_tau_residual``.
    """
    _check(k, A, T)
    k, A, T = float(k), float(A), float(T)
    if classify_case(k, A, T) != CASE_II:
        raise ContractError("horizon lies in case I")
    if k == 0.0:
        return FourLevelSolution(k, A, T, LOSSLESS, 0.0, math.pi / 4, math.pi / 4, 1.0, 1.0, 1.0)
    xi = k / A
    tau = _solve_tau(xi, A, T)
    g1, g2, kap = gammas(xi, A * tau)
    eff = math.exp(xi * (g1 - g2)) * (1.0 - xi * math.sin(2.0 * g2)) / math.sin(g1 + g2)
    dense, t_end = _shoot_phase1(k, A, tau, rtol)

    def phase1(t):
        return dense(min(max(t, 0.0), t_end))

    b_tau = 2.0 * xi * kap / (1.0 - kap)
    resid = float(phase1(tau)[1] - b_tau) / (1.0 + abs(b_tau))
    return FourLevelSolution(k, A, T, CASE_II, tau, g1, g2, kap, eff,
                             asymptotic_efficiency(xi), phase1, resid)


def case2_efficiency(k: float, A: float, T: float) -> float:
    """``exp(xi (g1 - g2)) (1 - xi sin 2 g2) / sin(g1 + g2)`` at the solved ``tau``."""
    _check(k, A, T)
    if k == 0.0:
        return 1.0
    xi = k / A
    tau = _solve_tau(xi, A, T)
    g1, g2, _ = gammas(xi, A * tau)
    return math.exp(xi * (g1 - g2)) * (1.0 - xi * math.sin(2.0 * g2)) / math.sin(g1 + g2)


def solve(k: float, A: float, T: float) -> FourLevelSolution:
    """Optimal solution in whichever case the horizon falls."""
    if classify_case(k, A, T) == CASE_I:
        return _case1_solution(float(k), float(A), float(T))
    return case2_solve(k, A, T)


def efficiency(k: float, A: float, T: float) -> float:
    if classify_case(k, A, T) == CASE_I:
        return case1_efficiency(k, A, T)
    return case2_efficiency(k, A, T)


def system(k: float, A: float) -> ChainSystem:
    return ChainSystem.four_level(k, A)
