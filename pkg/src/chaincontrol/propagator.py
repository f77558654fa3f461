"""Integration of the real chain dynamics and of the reduced polar dynamics.

Integration uses scipy's embedded Runge-Kutta pairs (DOP853 for tight
tolerances, RK45 otherwise) restarted at every control breakpoint, kick and
switch so the method keeps its order across discontinuities.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq

from .model import (
    DECAY_SCALE,
    PIECEWISE_CONSTANT,
    ChainSystem,
    ContractError,
    ControlSchedule,
    Kick,
    build_real_generator,
    polar_generator,
)


class ControlTooStiffError(RuntimeError):
    """The adaptive step size collapsed, usually because a control blew up."""

    def __init__(self, time: float, detail: str = ""):
        self.time = time
        super().__init__(f"control too stiff near t={time:.17g}" + (f": {detail}" if detail else ""))


def _method(tol: float) -> str:
    return "DOP853" if tol < 1e-6 else "RK45"


def _check_tol(tol: float) -> None:
    if not (0.0 < tol <= 1e-3):
        raise ContractError(f"tolerance must lie in (0, 1e-3], got {tol}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled real amplitudes with populations and norm."""

    times: np.ndarray
    states: np.ndarray
    dense: Callable[[float], np.ndarray] | None = field(default=None, repr=False)

    @property
    def populations(self) -> np.ndarray:
        return self.states ** 2

    @property
    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.states ** 2, axis=1))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        n = self.states.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"x{i + 1}" for i in range(n)]
                   + [f"p{i + 1}" for i in range(n)] + ["norm"])
        for t, x, p, nm in zip(self.times, self.states, self.populations, self.norm):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x]
                       + [repr(float(v)) for v in p] + [repr(float(nm))])
        return buf.getvalue()


def apply_kick(x: np.ndarray, sys: ChainSystem, kick: Kick) -> np.ndarray:
    """Rotate the two levels of ``kick.channel`` by its pulse area."""
    j = sys.channels.index(kick.channel)
    c, s = math.cos(kick.area), math.sin(kick.area)
    x = np.array(x, dtype=float)
    a, b = x[j], x[j + 1]
    x[j], x[j + 1] = c * a - s * b, s * a + c * b
    return x


def _piecewise_dense(pieces):
    starts = np.array([p[0] for p in pieces])

    def dense(t):
        i = int(np.searchsorted(starts, t, side="right")) - 1
        return pieces[max(i, 0)][1](t)
    return dense


def _integrate_pieces(rhs, x0, breaks, T, tol, t_eval, at_break=None):
    """Integrate ``rhs`` over [0, T] restarting at ``breaks``.

    ``at_break(t, x)`` may modify the state at a restart time (kicks).
    Returns sample times, states and a piecewise dense evaluator.
    """
    edges = [0.0] + [b for b in breaks if 0.0 < b < T] + [T]
    x = np.asarray(x0, dtype=float)
    if at_break is not None:
        x = at_break(0.0, x)
    ts, xs, pieces = [], [], []
    method = _method(tol)
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        if t_eval is None:
            sub = None
        else:
            sub = t_eval[(t_eval >= a) & (t_eval <= b)]
        # controls seen as one-sided limits from inside the piece
        lo, hi = np.nextafter(a, b), np.nextafter(b, a)
        piece_rhs = lambda t, y, lo=lo, hi=hi: rhs(min(max(t, lo), hi), y)
        sol = solve_ivp(piece_rhs, (a, b), x, method=method, rtol=tol, atol=tol * 1e-3,
                        t_eval=sub, dense_output=True)
        if sol.status == -1:
            stop = float(sol.t[-1]) if sol.t.size else a
            raise ControlTooStiffError(stop, sol.message)
        pieces.append((a, sol.sol))
        # solve_ivp returns a bare list when t_eval selects nothing
        seg_t = np.asarray(sol.t, dtype=float)
        seg_x = np.asarray(sol.y, dtype=float).reshape(len(x), -1).T
        x = sol.sol(b)
        if at_break is not None and b < T:
            x = at_break(b, x)
            if seg_t.size and seg_t[-1] == b:
                seg_x = seg_x.copy()
                seg_x[-1] = x
        if ts and seg_t.size and seg_t[0] == ts[-1][-1]:
            seg_t, seg_x = seg_t[1:], seg_x[1:]
        if seg_t.size:
            ts.append(seg_t)
            xs.append(seg_x)
    if at_break is not None:
        xT = at_break(T, x)
        if not np.array_equal(xT, x):
            x = xT
            if ts and ts[-1].size and ts[-1][-1] == T:
                xs[-1] = xs[-1].copy()
                xs[-1][-1] = x
    times = np.concatenate(ts) if ts else np.empty(0)
    states = np.concatenate(xs) if xs else np.empty((0, len(x)))
    return times, states, _piecewise_dense(pieces)


def propagate(sys: ChainSystem, ctrl: ControlSchedule, x0: Sequence[float],
              T: float | None = None, tol: float = 1e-8,
              t_eval: Sequence[float] | None = None,
              max_amplitude: float = 1e10) -> Trajectory:
    """Integrate ``dx/dt = M(t) x`` for the full real chain under ``ctrl``.

    The reported trajectory always ends with the state at exactly ``T``.
    Kicks scheduled at a time are applied before integration resumes.
    A control that turns non-finite or exceeds ``max_amplitude`` would force
    the step size towards zero; that raises :class:`ControlTooStiffError`
    with the offending time instead.
    """
    T = ctrl.T if T is None else float(T)
    if T <= 0.0:
        raise ContractError("T must be positive")
    if T > ctrl.T * (1 + 1e-12):
        raise ContractError(f"schedule covers [0, {ctrl.T}] but T={T}")
    _check_tol(tol)
    names = sys.channels
    missing = [c for c in names if c not in ctrl.channels]
    if missing:
        raise ContractError(f"schedule lacks channels {missing}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n_levels,):
        raise ContractError("initial state has the wrong dimension")

    def rhs(t, x):
        v = ctrl.at(t)
        vals = [v[c] for c in names]
        if not all(abs(w) <= max_amplitude for w in vals):
            raise ControlTooStiffError(t, f"control amplitude {max(map(abs, vals))!r}")
        return build_real_generator(sys, vals, v.get(DECAY_SCALE, 1.0)) @ x

    kicks = ctrl.kicks

    def at_break(t, x):
        for q in kicks:
            if q.time == t:
                x = apply_kick(x, sys, q)
        return x

    if t_eval is not None:
        t_eval = np.unique(np.append(np.asarray(t_eval, dtype=float), T))
    times, states, dense = _integrate_pieces(rhs, x0, ctrl.segment_breaks(), T, tol,
                                             t_eval, at_break)
    return Trajectory(times, states, dense)


@dataclass(frozen=True, eq=False)
class PolarTrajectory:
    """Radii of the reduced dynamics; ``r[:, -1]`` is the target amplitude."""

    times: np.ndarray
    r: np.ndarray
    dense: Callable[[float], np.ndarray] | None = field(default=None, repr=False)

    @property
    def r1(self) -> np.ndarray:
        return self.r[:, 0]

    @property
    def r2(self) -> np.ndarray:
        return self.r[:, -1]

    @property
    def efficiency(self) -> float:
        return float(self.r[-1, -1])


def polar_channels(sys: ChainSystem) -> tuple[str, ...]:
    """Control channels of the reduced problem (mixing cosines and couplings)."""
    n = sys.n_levels
    if n == 3:
        return ("u", "stokes")
    if n < 3:
        raise ContractError("no polar reduction for two levels")
    inner = ("inter",) if n == 4 else tuple(f"inter{i}" for i in range(1, n - 2))
    return ("u1",) + inner + ("u2",)


def polar_matrix(sys: ChainSystem, v) -> np.ndarray:
    """Reduced generator from a channel mapping; missing couplings sit at ``A``."""
    A = sys.coupling_bound
    if sys.n_levels == 3:
        return polar_generator(sys, v["u"], (v.get("stokes", A),))
    names = polar_channels(sys)
    return polar_generator(sys, v["u1"], tuple(v.get(c, A) for c in names[1:-1]), v["u2"])


def _check_polar_values(sys: ChainSystem, sched: ControlSchedule) -> None:
    names = polar_channels(sys)
    cos_names = [c for c in names if c.startswith("u")]
    for c in cos_names:
        if c not in sched.values:
            raise ContractError(f"polar schedule needs channel {c!r}")
        v = sched.values[c]
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ContractError(f"channel {c!r} must stay within [0, 1]")
    for c in names:
        if c not in cos_names and c in sched.values:
            if np.any(np.abs(sched.values[c]) > sys.coupling_bound * (1 + 1e-12)):
                raise ContractError(f"coupling {c!r} exceeds the bound A")


def propagate_polar(sys: ChainSystem, u_schedule: ControlSchedule, T: float | None = None,
                    tol: float = 1e-10, r0: Sequence[float] | None = None,
                    t_eval: Sequence[float] | None = None) -> PolarTrajectory:
    """Integrate the reduced (r1, ..., r_last) dynamics under mixing cosines.

    Three levels use channel ``u`` (and optionally a free ``stokes``
    coupling); chains of four or more use ``u1``/``u2`` plus optional
    intermediate couplings.  Couplings that are not given sit at ``A``.
    """
    T = u_schedule.T if T is None else float(T)
    if T <= 0.0:
        raise ContractError("T must be positive")
    _check_tol(tol)
    _check_polar_values(sys, u_schedule)
    d = 2 if sys.n_levels == 3 else sys.n_levels - 2
    if r0 is None:
        r0 = np.zeros(d)
        r0[0] = 1.0

    def rhs(t, r):
        v = u_schedule.at(t)
        for c, val in v.items():
            if c.startswith("u") and not (-1e-9 <= val <= 1 + 1e-9):
                raise ContractError(f"channel {c!r}={val} outside [0, 1] at t={t}")
        return polar_matrix(sys, v) @ r

    if t_eval is not None:
        t_eval = np.unique(np.append(np.asarray(t_eval, dtype=float), T))
    times, r, dense = _integrate_pieces(rhs, r0, u_schedule.segment_breaks(), T, tol, t_eval)
    return PolarTrajectory(times, r, dense)


def propagate_piecewise(generators: np.ndarray, dt: float | np.ndarray,
                        x0: Sequence[float]) -> np.ndarray:
    """Exact propagation through piecewise-constant generators.

    ``generators`` has shape ``(n_segments, d, d)``; returns the states at the
    segment edges, shape ``(n_segments + 1, d)``.
    """
    gens = np.asarray(generators, dtype=float)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (gens.shape[0],))
    props = expm(gens * dt[:, None, None])
    out = np.empty((gens.shape[0] + 1, gens.shape[1]))
    out[0] = x0
    for i, P in enumerate(props):
        out[i + 1] = P @ out[i]
    return out


# ---------------------------------------------------------------------------
# full controls from a polar solution


@dataclass(frozen=True)
class AngleControl:
    """Closed-form mixing cosine of one merged pair.

    ``side`` is ``"pump"`` (levels 1, 2; angle starts at pi/2) or
    ``"stokes"`` (last two levels; angle starts at 0 and is kicked to pi/2 at
    ``T``).  ``pinned`` lists intervals with ``u == 1`` held.
    """

    side: str
    u: Callable[[float], float]
    du: Callable[[float], float]
    pinned: tuple[tuple[float, float], ...] = ()
    # whether the pinned intervals count as infinite amplitude
    pinned_unbounded: bool = True


def _pinned(ac: AngleControl, t: float) -> bool:
    return any(a <= t <= b for a, b in ac.pinned)


def _cutoff_time(ac: AngleControl, lo: float, hi: float, toward: str, eps: float) -> float:
    """Time near a divergence where ``1 - u`` equals ``eps``."""
    g = lambda t: (1.0 - ac.u(t)) - eps
    if toward == "hi":
        if g(lo) <= 0.0:
            return lo
        return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if g(hi) <= 0.0:
        return hi
    return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def reconstruct_full_controls(sys: ChainSystem, polar: PolarTrajectory,
                              angles: Sequence[AngleControl], n_samples: int = 401,
                              cutoff: float = 1e-9) -> ControlSchedule:
    """Rabi frequencies that realise a polar solution in the full chain.

    From ``x2 = r1 u`` and the chain equation for ``x2``::

        Omega_p = (d(r1 u)/dt + k r1 u + c x3) / (r1 sqrt(1 - u^2))

    with ``d(r1 u)/dt = r1' u + r1 u'``; ``u'`` comes from the closed form.
    The Stokes side is the mirror expression.  Where ``u`` approaches 1 the
    amplitude diverges: below ``1 - u = cutoff`` the remaining rotation is
    delivered as a kick and the channel is flagged unbounded.
    """
    n = sys.n_levels
    if n not in (3, 4):
        raise ContractError("reconstruction is implemented for 3- and 4-level chains")
    if polar.dense is None:
        raise ContractError("polar trajectory needs dense output")
    T = float(polar.times[-1])
    A = sys.coupling_bound
    k1 = sys.decay_rates[1]
    k_last = sys.decay_rates[-2]
    pump = next((a for a in angles if a.side == "pump"), None)
    stokes = next((a for a in angles if a.side == "stokes"), None)
    if pump is None or (n == 4 and stokes is None):
        raise ContractError("missing mixing-angle controls")
    u2f = (lambda t: 1.0) if stokes is None else stokes.u
    du2f = (lambda t: 0.0) if stokes is None else stokes.du

    def polar_rate(t):
        r = polar.dense(t)
        v = {"u": pump.u(t)} if n == 3 else {"u1": pump.u(t), "u2": u2f(t)}
        return r, polar_matrix(sys, v) @ r

    def omega_p(t):
        u = pump.u(t)
        r, dr = polar_rate(t)
        r1 = r[0]
        if r1 < 1e-12:
            raise ContractError(f"bright state depleted at t={t}")
        x3 = r[1] if n == 3 else r[1] * u2f(t)
        c = A
        num = dr[0] * u + r1 * pump.du(t) + k1 * r1 * u + c * x3
        return num / (r1 * math.sqrt(max(1.0 - u * u, 0.0)))

    def omega_s(t):
        u = u2f(t)
        r, dr = polar_rate(t)
        rl = r[-1]
        if rl < 1e-12:
            return 0.0
        x_prev = r[0] * pump.u(t)
        num = A * x_prev - k_last * rl * u - (dr[-1] * u + rl * du2f(t))
        return num / (rl * math.sqrt(max(1.0 - u * u, 0.0)))

    kicks = []
    unbounded: dict[str, list[tuple[float, float]]] = {"pump": [], "stokes": []}
    breaks: set[float] = set()
    # pump side: from theta = pi/2 at t=0
    u0 = pump.u(0.0)
    if _pinned(pump, 0.0) or u0 >= 1.0:
        kicks.append(Kick(0.0, "pump", math.pi / 2))
    else:
        kicks.append(Kick(0.0, "pump", math.asin(min(u0, 1.0))))
    pump_free = []  # open intervals with finite pump amplitude
    pins = sorted(pump.pinned)
    cur = 0.0
    for a, b in pins:
        if a > cur:
            tc = _cutoff_time(pump, cur, a, "hi", cutoff)
            pump_free.append((cur, tc))
            kicks.append(Kick(tc, "pump", math.acos(min(pump.u(tc), 1.0))))
            if pump.pinned_unbounded:
                unbounded["pump"].append((tc, b))
            else:
                unbounded["pump"].append((tc, a))
                breaks.add(a)
        elif pump.pinned_unbounded:
            unbounded["pump"].append((a, b))
        breaks.update((a, b))
        cur = b
    if cur < T:
        pump_free.append((cur, T))

    stokes_free = []
    if n == 4:
        spins = sorted(stokes.pinned)
        cur = 0.0
        for a, b in spins:
            if a > cur:
                stokes_free.append((cur, a))
            cur = b
            breaks.update((a, b))
        if cur < T:
            # leaving the pinned hold: amplitude diverges right after ``cur``
            tc = _cutoff_time(stokes, cur, T, "lo", cutoff) if cur > 0.0 else cur
            if tc > cur:
                kicks.append(Kick(tc, "stokes", math.acos(min(stokes.u(tc), 1.0))))
                unbounded["stokes"].append((cur, tc))
            stokes_free.append((tc, T))
        uT = stokes.u(T)
        kicks.append(Kick(T, "stokes", math.pi / 2 - math.acos(min(uT, 1.0))))

    def _inside(iv, t):
        return any(a <= t <= b for a, b in iv)

    def evaluator(t):
        out = {"pump": omega_p(t) if _inside(pump_free, t) else 0.0}
        if n == 3:
            out["stokes"] = A
        else:
            out["inter"] = A
            out["stokes"] = omega_s(t) if _inside(stokes_free, t) else 0.0
        return out

    grid = np.linspace(0.0, T, n_samples)
    vals = {c: np.zeros(n_samples) for c in sys.channels}
    for i, t in enumerate(grid):
        for c, v in evaluator(t).items():
            vals[c][i] = v
    kept = {c: tuple(iv) for c, iv in unbounded.items() if iv}
    meta = {"kind": f"{n}-level optimal", "cutoff": cutoff}
    for iv in kept.values():
        for a, b in iv:
            breaks.update((a, b))
    return ControlSchedule(grid, vals, "linear", bounds={c: sys.bound_of(c) for c in sys.channels},
                           unbounded=kept, kicks=tuple(kicks), breakpoints=tuple(breaks),
                           evaluator=evaluator, metadata=meta)


# ---------------------------------------------------------------------------
# time rescaling


@dataclass(frozen=True, eq=False)
class RescaledSchedule:
    schedule: ControlSchedule
    duration: float
    truncated: bool


def _stretch(ctrl: ControlSchedule, A: float, t: float) -> float:
    v = ctrl.at(t)
    m = max((abs(x) for c, x in v.items() if c != DECAY_SCALE), default=0.0)
    return max(1.0, m / A)


def rescale_time(ctrl: ControlSchedule, A: float, tol: float = 1e-12) -> RescaledSchedule:
    """Stretch time wherever a channel exceeds ``A`` so all channels fit.

    The new clock runs as ``dtau = s dt`` with ``s = max(1, max|Omega|/A)``;
    every channel and the decay rates are divided by ``s`` (carried in the
    ``decay_scale`` channel), which leaves the dynamics unchanged.  Kicks and
    unbounded flags are mapped to the new clock; a schedule that still holds
    flagged intervals is reported as truncated at its reconstruction cutoff.
    """
    T = ctrl.T
    truncated = bool(ctrl.unbounded)
    scale_old = ctrl.values.get(DECAY_SCALE)
    if ctrl.evaluator is None and ctrl.interpolation == PIECEWISE_CONSTANT:
        vals = {c: v for c, v in ctrl.values.items() if c != DECAY_SCALE}
        s = np.ones_like(ctrl.grid)
        for v in vals.values():
            s = np.maximum(s, np.abs(v) / A)
        dtau = np.diff(ctrl.grid) * s[:-1]
        new_grid = np.concatenate([[0.0], np.cumsum(dtau)])
        new_vals = {c: v / s for c, v in vals.items()}
        base = scale_old if scale_old is not None else np.ones_like(s)
        new_vals[DECAY_SCALE] = base / s
        fwd = lambda t: float(np.interp(t, ctrl.grid, new_grid))
        sched = _rebuild(ctrl, new_grid, new_vals, fwd, None)
        return RescaledSchedule(sched, float(new_grid[-1]), truncated)

    edges = [0.0] + ctrl.segment_breaks() + [T]
    fwd_pieces, inv_pieces = [], []
    tau0 = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        f = solve_ivp(lambda t, y: [_stretch(ctrl, A, t)], (a, b), [tau0], method="DOP853",
                      rtol=tol, atol=tol, dense_output=True)
        tau1 = float(f.y[0, -1])
        fwd_pieces.append((a, b, tau0, tau1, f.sol))
        ev = lambda tau, y, b=b: y[0] - b
        ev.terminal = True
        g = solve_ivp(lambda tau, y: [1.0 / _stretch(ctrl, A, min(max(y[0], a), b))],
                      (tau0, tau1 * (1 + 1e-9) + 1e-12), [a], method="DOP853", rtol=tol,
                      atol=tol, dense_output=True, events=ev)
        inv_pieces.append((tau0, tau1, a, b, g.sol))
        tau0 = tau1
    duration = tau0

    def fwd(t):
        for a, b, t0, t1, sol in fwd_pieces:
            if t <= b:
                return float(sol(min(max(t, a), b))[0])
        return duration

    def inverse(tau):
        for t0, t1, a, b, sol in inv_pieces:
            if tau <= t1:
                return float(min(max(sol(min(max(tau, t0), t1))[0], a), b))
        return T

    def evaluator(tau):
        t = inverse(tau)
        v = ctrl.at(t)
        s = _stretch(ctrl, A, t)
        out = {c: x / s for c, x in v.items() if c != DECAY_SCALE}
        out[DECAY_SCALE] = v.get(DECAY_SCALE, 1.0) / s
        return out

    new_grid = np.array([fwd(t) for t in ctrl.grid])
    new_grid[-1] = duration
    new_vals = {c: np.zeros(new_grid.size) for c in list(ctrl.values) + [DECAY_SCALE]}
    for i, t in enumerate(ctrl.grid):
        v = ctrl.at(t)
        s = _stretch(ctrl, A, t)
        for c in new_vals:
            if c == DECAY_SCALE:
                new_vals[c][i] = v.get(DECAY_SCALE, 1.0) / s
            else:
                new_vals[c][i] = v[c] / s
    sched = _rebuild(ctrl, new_grid, new_vals, fwd, evaluator)
    return RescaledSchedule(sched, duration, truncated)


def _rebuild(ctrl, new_grid, new_vals, fwd, evaluator):
    kicks = tuple(Kick(fwd(q.time), q.channel, q.area) for q in ctrl.kicks)
    unb = {c: tuple((fwd(a), fwd(b)) for a, b in iv) for c, iv in ctrl.unbounded.items()}
    bps = tuple(fwd(b) for b in ctrl.breakpoints)
    bounds = {c: (b if b is not None else None) for c, b in ctrl.bounds.items()}
    meta = dict(ctrl.metadata)
    meta["rescaled"] = True
    return ControlSchedule(new_grid, new_vals, ctrl.interpolation, bounds, unb, kicks, bps,
                           evaluator, meta)
