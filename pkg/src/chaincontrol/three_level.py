"""Optimal transfer through one decaying level (Lambda system).

In the reduced coordinates ``r1`` (bright amplitude) and ``r2 = x3`` the
Stokes field sits at its bound ``A`` and the only control left is the
mixing cosine ``u = cos(theta)``::

    r1' = -k u^2 r1 - A u r2,      r2' = A u r1.

The optimum is ``u = 1`` for horizons up to the critical time ``T_M``;
beyond it ``u`` rises as ``1/sqrt(A^2 (tau^2 - t^2) + 2 k (tau - t) + 1)``
until the switching time ``tau`` and stays at 1 afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.optimize import bisect

from .model import ChainSystem, ContractError, ControlSchedule
from .propagator import AngleControl

SHORT_TIME = "short-time"
SWITCHED = "switched"
LOSSLESS = "lossless"

_XTOL = 1e-14


def _adjoint(k: float, A: float, s):
    """Costate ``(lambda1, lambda2)`` a time ``s`` before the horizon.

    Solves the backward costate equations under ``u = 1`` from
    ``(lambda1, lambda2) = (0, 1)``.  Over-damped, critically damped and
    under-damped branches are written in real arithmetic.
    """
    s = np.asarray(s, dtype=float)
    d = 4.0 * A * A - k * k
    if abs(d) <= 1e-12 * 4.0 * A * A:
        e = np.exp(-A * s)
        return A * s * e, e * (A * s + 1.0)
    if d > 0.0:
        W = math.sqrt(d)
        e = np.exp(-0.5 * k * s)
        sn, cs = np.sin(0.5 * W * s), np.cos(0.5 * W * s)
        return 2.0 * A / W * e * sn, e * (cs + k / W * sn)
    w = math.sqrt(-d)
    slow = np.exp(-0.5 * (k - w) * s)
    # slow*(1 - exp(-w s)) without cancellation
    diff = slow * -np.expm1(-w * s)
    return A / w * diff, 0.5 * (slow * (1.0 + np.exp(-w * s)) + k / w * diff)


@dataclass(frozen=True)
class BackwardAdjoint:
    """Closed-form costate on ``[0, horizon]`` with ``lambda(horizon) = (0, 1)``."""

    k: float
    A: float
    horizon: float

    def __call__(self, t):
        return _adjoint(self.k, self.A, self.horizon - np.asarray(t, dtype=float))

    def ratio(self, t):
        """``a = lambda2 / lambda1``."""
        l1, l2 = self(t)
        return l2 / l1


def backward_adjoint(k: float, A: float, horizon: float) -> BackwardAdjoint:
    if k < 0 or A <= 0:
        raise ContractError("need k >= 0 and A > 0")
    return BackwardAdjoint(float(k), float(A), float(horizon))


def critical_time_closed_form(k: float, A: float) -> float:
    """``T_M`` for the over-damped case ``k^2 > 4 A^2``."""
    w = math.sqrt(k * k - 4.0 * A * A)
    return math.log((-2.0 * A * A + 5.0 * k * k + 3.0 * k * w)
                    / (2.0 * (A * A + 2.0 * k * k))) / w


def _critical_time_bracketed(k: float, A: float) -> float:
    # a(T_M) = 2k/A written without the division
    f = lambda s: (lambda l: l[1] - 2.0 * k / A * l[0])(_adjoint(k, A, s))
    d = 4.0 * A * A - k * k
    if d > 1e-12 * 4.0 * A * A:
        hi = 2.0 * math.pi / math.sqrt(d)
        hi *= 1.0 - 1e-12
    else:
        hi = 1.0 / A
        while f(hi) > 0.0:
            hi *= 2.0
    return bisect(f, 0.0, hi, xtol=_XTOL, rtol=8.9e-16, maxiter=400)


def critical_time(k: float, A: float, method: str = "auto") -> float:
    """Longest horizon for which ``u = 1`` throughout is optimal.

    ``method="auto"`` uses the closed form when ``k^2 > 4 A^2`` and bisection
    on ``lambda2(0) = (2k/A) lambda1(0)`` otherwise; ``"root"`` forces
    bisection.
    """
    if k < 0 or A <= 0:
        raise ContractError("need k >= 0 and A > 0")
    if method not in ("auto", "closed", "root"):
        raise ContractError(f"unknown method {method!r}")
    if method == "closed" or (method == "auto" and k * k > 4.0 * A * A * (1 + 1e-12)):
        if k * k <= 4.0 * A * A:
            raise ContractError("closed form needs k^2 > 4 A^2")
        return critical_time_closed_form(k, A)
    return _critical_time_bracketed(k, A)


def switching_time(k: float, A: float, T: float, T_M: float | None = None) -> float | None:
    """Switch from the interior arc to ``u = 1``; ``None`` when ``T <= T_M``.

    Solves ``a(tau) = A tau + 2k/A`` with ``a`` from the costate run back from
    ``T``.  In terms of ``s = T - tau`` the residual is bracketed on
    ``(0, T_M]`` and strictly decreasing there.
    """
    if T_M is None:
        T_M = critical_time(k, A)
    if T <= T_M:
        return None

    def h(s):
        l1, l2 = _adjoint(k, A, s)
        return l2 - (A * (T - s) + 2.0 * k / A) * l1

    s = bisect(h, 0.0, T_M, xtol=min(_XTOL, 1e-3 * T_M), rtol=8.9e-16, maxiter=400)
    return T - s


@dataclass(frozen=True)
class ThreeLevelSolution:
    """Optimal mixing cosine and predicted transfer amplitude."""

    k: float
    A: float
    T: float
    case: str
    T_M: float
    tau: float
    efficiency: float

    def _Q(self, t):
        tau = self.tau
        return self.A ** 2 * (tau * tau - t * t) + 2.0 * self.k * (tau - t) + 1.0

    def u(self, t):
        t = np.asarray(t, dtype=float)
        if self.case == LOSSLESS:
            return np.full(t.shape, math.pi / (2.0 * self.A * self.T))[()]
        if self.case == SHORT_TIME:
            return np.ones(t.shape)[()]
        out = np.where(t < self.tau, 1.0 / np.sqrt(np.maximum(self._Q(np.minimum(t, self.tau)), 1.0)), 1.0)
        return out[()]

    def du(self, t):
        """Exact time derivative ``(A^2 t + k) u^3`` on the interior arc."""
        t = np.asarray(t, dtype=float)
        if self.case != SWITCHED:
            return np.zeros(t.shape)[()]
        u = self.u(t)
        return np.where(t < self.tau, (self.A ** 2 * t + self.k) * u ** 3, 0.0)[()]

    @property
    def u0(self) -> float:
        return float(self.u(0.0))

    def state(self, t) -> np.ndarray:
        """Closed-form optimal ``(r1, r2)`` at time ``t``.

        On the interior arc ``r1 = u(0)/u(t)`` and ``r2 = A u(0) t``; after
        the switch the state follows the damped rotation with ``u = 1``.
        """
        t = float(t)
        M1 = np.array([[-self.k, -self.A], [self.A, 0.0]])
        if self.case == SHORT_TIME:
            return expm(M1 * t) @ np.array([1.0, 0.0])
        if self.case == LOSSLESS:
            c = math.pi / (2.0 * self.T)
            return np.array([math.cos(c * t), math.sin(c * t)])
        u0 = self.u0
        if t <= self.tau:
            return np.array([u0 / float(self.u(t)), self.A * u0 * t])
        r_tau = np.array([u0, self.A * u0 * self.tau])
        return expm(M1 * (t - self.tau)) @ r_tau

    def omega_p_closed_form(self, t) -> float:
        """Pump amplitude on the interior arc, ``(k + A^2 t) u / sqrt(1 - u^2)``."""
        u = float(self.u(t))
        return (self.k + self.A ** 2 * float(t)) * u / math.sqrt(1.0 - u * u)

    def angle_controls(self) -> list[AngleControl]:
        if self.case == LOSSLESS:
            pinned = ()
        elif self.case == SHORT_TIME:
            pinned = ((0.0, self.T),)
        else:
            pinned = ((self.tau, self.T),)
        return [AngleControl("pump", lambda t: float(self.u(t)), lambda t: float(self.du(t)),
                             pinned, pinned_unbounded=True)]

    def sample(self, n: int = 201) -> tuple[np.ndarray, np.ndarray]:
        t = np.linspace(0.0, self.T, n)
        return t, np.asarray(self.u(t), dtype=float)

    def u_schedule(self, n: int = 201) -> ControlSchedule:
        """Analytic ``u*`` as a schedule (evaluator-backed, switch as breakpoint)."""
        t, u = self.sample(n)
        bps = (self.tau,) if self.case == SWITCHED else ()
        return ControlSchedule(t, {"u": u}, "linear", {"u": 1.0}, breakpoints=bps,
                               evaluator=lambda s: {"u": float(self.u(s))},
                               metadata={"kind": "u*", "case": self.case})

    def to_dict(self, n_samples: int = 201) -> dict:
        t, u = self.sample(n_samples)
        return {
            "k": self.k, "A": self.A, "T": self.T, "case": self.case,
            "T_M": self.T_M, "tau": self.tau, "efficiency": self.efficiency,
            "u_star": {"t": t.tolist(), "u": u.tolist()},
        }


def optimal_u(k: float, A: float, T: float) -> ThreeLevelSolution:
    """Optimal control for horizon ``T``.

    With ``k = 0`` and ``T > pi/(2A)`` any constant ``u = pi/(2 A T)``
    reaches unit transfer; that case is labelled ``"lossless"``.
    """
    if k < 0 or A <= 0 or T <= 0:
        raise ContractError("need k >= 0, A > 0, T > 0")
    k, A, T = float(k), float(A), float(T)
    if k == 0.0:
        T_M = math.pi / (2.0 * A)
        if T <= T_M:
            return ThreeLevelSolution(k, A, T, SHORT_TIME, T_M, T, math.sin(A * T))
        return ThreeLevelSolution(k, A, T, LOSSLESS, T_M, T, 1.0)
    T_M = critical_time(k, A)
    tau = switching_time(k, A, T, T_M)
    if tau is None:
        l1, _ = _adjoint(k, A, T)
        return ThreeLevelSolution(k, A, T, SHORT_TIME, T_M, T, float(l1))
    u0 = 1.0 / math.sqrt(A * A * tau * tau + 2.0 * k * tau + 1.0)
    l1, l2 = _adjoint(k, A, T - tau)
    # lambda . r is conserved, so r2(T) = lambda(tau) . r(tau)
    eff = u0 * (float(l1) + A * tau * float(l2))
    return ThreeLevelSolution(k, A, T, SWITCHED, T_M, tau, eff)


def efficiency_bound(k: float, A: float, T: float) -> float:
    """Largest reachable ``r2(T)`` (amplitude of the target level)."""
    return optimal_u(k, A, T).efficiency


def hamiltonian(u, k: float, A: float, r, lam) -> np.ndarray:
    """Control Hamiltonian ``lambda . (M(u) r)`` of the reduced problem."""
    u = np.asarray(u, dtype=float)
    r1, r2 = r
    l1, l2 = lam
    return l1 * (-k * u * u * r1 - A * u * r2) + l2 * A * u * r1


def costate_ratio(sol: ThreeLevelSolution, t: float) -> float:
    """``a = lambda2/lambda1`` along the optimal trajectory."""
    if sol.case == SWITCHED and t <= sol.tau:
        u = float(sol.u(t))
        return sol.A * t * u + 2.0 * sol.k / sol.A * u
    return float(backward_adjoint(sol.k, sol.A, sol.T).ratio(t))


# ---------------------------------------------------------------------------
# adiabatic limit and fractional transfer


def _half_cosine(x: float) -> float:
    return 0.5 - 0.5 * math.cos(math.pi * min(max(x, 0.0), 1.0))


def stirap_limit_pulses(k: float, A: float, T: float, beta: float = math.pi / 2,
                        phi: float = 0.0, edge_width: float = 0.0, n_samples: int = 2001,
                        max_ratio: float = 1e4) -> ControlSchedule:
    """Dark-state pulses ramping ``Omega_p/Omega_s`` from 0 to ``tan(beta)``.

    The Stokes field sits at ``A`` and the pump follows
    ``tan(mixing angle)`` with ``sin(mixing angle) = sin(beta) t/T``, the
    long-horizon limit of the optimal solution (the target amplitude grows
    linearly in time).  The target state is
    ``cos(beta)|1> - exp(i phi) sin(beta)|3>``; ``phi`` is carried as
    metadata since the real propagator only covers ``phi = 0``.

    ``edge_width > 0`` adds a half-cosine Stokes rise before the ramp and,
    for ``beta < pi/2``, a common fall of both fields after it.  For full
    transfer the pump ratio passes ``max_ratio`` right before ``T``; the
    rest of the ramp is flagged unbounded.
    """
    if not (0.0 <= beta <= math.pi / 2):
        raise ContractError("beta must lie in [0, pi/2]")
    if not (-math.pi <= phi <= math.pi):
        raise ContractError("phi must lie in [-pi, pi]")
    if T <= 0 or A <= 0 or k < 0:
        raise ContractError("need T > 0, A > 0, k >= 0")
    w = float(edge_width)
    full = beta >= math.pi / 2 - 1e-15
    t0 = w
    t1 = T - (w if (w > 0 and not full) else 0.0)
    if t1 <= t0:
        raise ContractError("edges leave no room for the ramp")
    sb = math.sin(beta)
    L = t1 - t0

    def ratio(t):
        if t <= t0:
            return 0.0
        x = sb * min(t - t0, L) / L
        return x / math.sqrt(max(1.0 - x * x, 0.0)) if x < 1.0 else math.inf

    # end of the finite part of the ramp
    if full:
        t_cut = t0 + L / math.sqrt(1.0 + 1.0 / max_ratio ** 2)
    else:
        t_cut = T

    def envelope(t):
        if w <= 0:
            return 1.0
        if t < t0:
            return _half_cosine(t / w)
        if not full and t > t1:
            return 1.0 - _half_cosine((t - t1) / w)
        return 1.0

    def evaluator(t):
        e = envelope(t)
        if t > t_cut:
            return {"pump": 0.0, "stokes": A * e}
        return {"pump": A * e * ratio(t), "stokes": A * e}

    grid = np.linspace(0.0, T, n_samples)
    pump = np.array([evaluator(t)["pump"] for t in grid])
    stokes = np.array([evaluator(t)["stokes"] for t in grid])
    unbounded = {"pump": ((t_cut, T),)} if full and t_cut < T else {}
    bps = tuple(b for b in (t0, t1, t_cut) if 0.0 < b < T)
    meta = {"kind": "stirap", "beta": beta, "phi": phi, "edge_width": w,
            "k": k, "A": A, "max_ratio": max_ratio}
    return ControlSchedule(grid, {"pump": pump, "stokes": stokes}, "linear",
                           {"pump": None, "stokes": A}, unbounded, (), bps, evaluator, meta)
