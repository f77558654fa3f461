"""Chain systems, control schedules and the real reduced dynamics.

Amplitudes of an N-level chain with nearest-neighbour couplings and
zero detunings are rotated by ``x_j = i**(j-1) * x'_j`` so that, starting
from a real state, the effective Schroedinger equation stays real::

    dx/dt = M x,   M[j, j] = -k_j,  M[j, j+1] = -Omega_j,  M[j+1, j] = +Omega_j

This is the only phase convention supported.  Every coupling acts as a
plane rotation that moves amplitude from level ``j`` towards ``j+1`` for
positive pulse area.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

PIECEWISE_LINEAR = "linear"
PIECEWISE_CONSTANT = "constant"
_INTERPOLATIONS = (PIECEWISE_LINEAR, PIECEWISE_CONSTANT)

# reserved channel that multiplies every decay rate (time-rescaled schedules)
DECAY_SCALE = "decay_scale"


class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


def channel_names(n_levels: int) -> tuple[str, ...]:
    """Names of the coupling channels of a chain, pump side first."""
    if n_levels < 2:
        raise ContractError("a chain needs at least two levels")
    if n_levels == 2:
        return ("pump",)
    if n_levels == 3:
        return ("pump", "stokes")
    if n_levels == 4:
        return ("pump", "inter", "stokes")
    middle = tuple(f"inter{i}" for i in range(1, n_levels - 2))
    return ("pump",) + middle + ("stokes",)


@dataclass(frozen=True)
class ChainSystem:
    """An N-level chain with per-level decay and one amplitude bound ``A``.

    ``bounded`` lists the coupling indices capped by ``coupling_bound``; by
    default the Stokes coupling for three levels and every intermediate
    coupling for longer chains (the pump and Stokes fields are unbounded in
    the relaxed control problem).
    """

    n_levels: int
    decay_rates: tuple[float, ...]
    coupling_bound: float
    bounded: tuple[int, ...] | None = None

    def __post_init__(self):
        rates = tuple(float(k) for k in self.decay_rates)
        object.__setattr__(self, "decay_rates", rates)
        if self.n_levels < 2 or len(rates) != self.n_levels:
            raise ContractError(
                f"need one decay rate per level ({self.n_levels}), got {len(rates)}")
        if not all(math.isfinite(k) and k >= 0.0 for k in rates):
            raise ContractError("decay rates must be finite and non-negative")
        if rates[0] != 0.0 or rates[-1] != 0.0:
            raise ContractError("end levels of a transfer chain must not decay")
        if not (math.isfinite(self.coupling_bound) and self.coupling_bound > 0.0):
            raise ContractError("coupling bound A must be positive and finite")
        object.__setattr__(self, "coupling_bound", float(self.coupling_bound))
        if self.bounded is None:
            n = self.n_levels
            default = (1,) if n == 3 else tuple(range(1, n - 2)) if n > 3 else ()
            object.__setattr__(self, "bounded", default)
        else:
            object.__setattr__(self, "bounded", tuple(int(i) for i in self.bounded))
        if any(i < 0 or i >= self.n_levels - 1 for i in self.bounded):
            raise ContractError("bounded coupling index out of range")

    @classmethod
    def three_level(cls, k: float, A: float) -> "ChainSystem":
        return cls(3, (0.0, k, 0.0), A)

    @classmethod
    def four_level(cls, k: float, A: float) -> "ChainSystem":
        return cls(4, (0.0, k, k, 0.0), A)

    @classmethod
    def uniform_chain(cls, n_levels: int, k: float, A: float) -> "ChainSystem":
        """Chain whose intermediate levels all decay at rate ``k``."""
        return cls(n_levels, (0.0,) + (float(k),) * (n_levels - 2) + (0.0,), A)

    @property
    def channels(self) -> tuple[str, ...]:
        return channel_names(self.n_levels)

    @property
    def k(self) -> float:
        """Largest intermediate decay rate."""
        return max(self.decay_rates)

    @property
    def xi(self) -> float:
        """Dimensionless loss ratio ``k / A``."""
        return self.k / self.coupling_bound

    def bound_of(self, channel: str) -> float | None:
        idx = self.channels.index(channel)
        return self.coupling_bound if idx in self.bounded else None

    def to_dict(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "decay_rates": list(self.decay_rates),
            "coupling_bound": self.coupling_bound,
            "bounded": list(self.bounded),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChainSystem":
        return cls(int(data["n_levels"]), tuple(data["decay_rates"]),
                   float(data["coupling_bound"]),
                   tuple(data["bounded"]) if data.get("bounded") is not None else None)


def build_real_generator(sys: ChainSystem, controls, decay_scale: float = 1.0) -> np.ndarray:
    """Real matrix ``M`` with ``dx/dt = M x`` for instantaneous coupling values.

    ``controls`` is either a sequence ordered like ``sys.channels`` or a
    mapping from channel name to value.
    """
    names = sys.channels
    if isinstance(controls, Mapping):
        missing = [c for c in names if c not in controls]
        if missing:
            raise ContractError(f"missing control channels: {missing}")
        values = [float(controls[c]) for c in names]
    else:
        values = [float(v) for v in controls]
        if len(values) != len(names):
            raise ContractError(
                f"expected {len(names)} control values {names}, got {len(values)}")
    n = sys.n_levels
    m = np.zeros((n, n))
    m[np.diag_indices(n)] = -decay_scale * np.asarray(sys.decay_rates)
    for j, omega in enumerate(values):
        m[j, j + 1] = -omega
        m[j + 1, j] = omega
    return m


def to_real(psi: Sequence[complex]) -> np.ndarray:
    """Map complex chain amplitudes to the real representation.

    Raises if the rotated amplitudes are not real, which happens for states
    that are not reachable from a real initial state.
    """
    psi = np.asarray(psi, dtype=complex)
    phases = 1j ** np.arange(psi.size)
    x = phases * psi
    if np.max(np.abs(x.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(x))):
        raise ContractError("state has no real representation in the rotated frame")
    return x.real.copy()


def from_real(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / (1j ** np.arange(x.size))


@dataclass(frozen=True)
class PolarState:
    """Bright/target radii with the mixing angles of the merged pairs.

    For three levels ``theta2`` is ``None``.  Angles lie in ``[0, pi/2]`` when
    the amplitudes are non-negative.
    """

    r1: float
    r2: float
    theta1: float
    theta2: float | None = None

    @property
    def u1(self) -> float:
        return math.cos(self.theta1)

    @property
    def u2(self) -> float | None:
        return None if self.theta2 is None else math.cos(self.theta2)


def _angle(num: float, den: float) -> float:
    # theta with tan(theta) = num/den; theta=0 when both vanish
    if num == 0.0 and den == 0.0:
        return 0.0
    return math.atan2(num, den)


def to_polar(x: Sequence[float]) -> PolarState:
    """Polar coordinates of a real 3- or 4-level state.

    Three levels: ``r1 = |(x1, x2)|``, ``r2 = x3``, ``tan(theta) = x1/x2``.
    Four levels additionally ``r2 = |(x3, x4)|``, ``tan(theta2) = x4/x3``.
    """
    x = [float(v) for v in x]
    if len(x) == 3:
        x1, x2, x3 = x
        return PolarState(math.hypot(x1, x2), x3, _angle(x1, x2))
    if len(x) == 4:
        x1, x2, x3, x4 = x
        return PolarState(math.hypot(x1, x2), math.hypot(x3, x4),
                          _angle(x1, x2), _angle(x4, x3))
    raise ContractError("polar coordinates are defined for 3- and 4-level states")


def from_polar(p: PolarState) -> np.ndarray:
    if p.theta2 is None:
        return np.array([p.r1 * math.sin(p.theta1), p.r1 * math.cos(p.theta1), p.r2])
    return np.array([p.r1 * math.sin(p.theta1), p.r1 * math.cos(p.theta1),
                     p.r2 * math.cos(p.theta2), p.r2 * math.sin(p.theta2)])


def polar_generator(sys: ChainSystem, u_first: float, couplings: Sequence[float],
                    u_last: float | None = None) -> np.ndarray:
    """Generator of the reduced dynamics after merging the end pairs.

    Three levels: state ``(r1, x3)``, ``couplings = (Omega_s,)``, no
    ``u_last``.  N >= 4: state ``(r1, x3, ..., x_{N-2}, r_last)`` and
    ``couplings`` holds the N-3 intermediate couplings.
    """
    k = sys.decay_rates
    n = sys.n_levels
    if n == 3:
        (s,) = couplings
        u = u_first
        return np.array([[-k[1] * u * u, -s * u], [s * u, 0.0]])
    if n < 3 or len(couplings) != n - 3 or u_last is None:
        raise ContractError("polar reduction needs u_first, N-3 couplings and u_last")
    d = n - 2
    m = np.zeros((d, d))
    for j in range(d):
        m[j, j] = -k[j + 1]
    m[0, 0] *= u_first * u_first
    m[-1, -1] *= u_last * u_last
    for j, c in enumerate(couplings):
        w = c
        if j == 0:
            w *= u_first
        if j == d - 2:
            w *= u_last
        m[j, j + 1] = -w
        m[j + 1, j] = w
    return m


Evaluator = Callable[[float], Mapping[str, float]]


@dataclass(frozen=True)
class Kick:
    """Instantaneous pulse of finite area on one coupling channel."""

    time: float
    channel: str
    area: float


@dataclass(frozen=True, eq=False)
class ControlSchedule:
    """Time-sampled control channels on a grid covering ``[0, T]``.

    ``interpolation`` is ``"linear"`` or ``"constant"`` (left-continuous:
    ``values[i]`` holds on ``[grid[i], grid[i+1])``).  Analytic schedules
    carry an ``evaluator`` that is used instead of interpolation when
    propagating.  Channels that formally diverge are listed in ``unbounded``
    as closed intervals; on those intervals the channel's finite rotation is
    delivered by a :class:`Kick` and the coupling is otherwise held at zero.
    """

    grid: np.ndarray
    values: Mapping[str, np.ndarray]
    interpolation: str = PIECEWISE_LINEAR
    bounds: Mapping[str, float | None] = field(default_factory=dict)
    unbounded: Mapping[str, tuple[tuple[float, float], ...]] = field(default_factory=dict)
    kicks: tuple[Kick, ...] = ()
    breakpoints: tuple[float, ...] = ()
    evaluator: Evaluator | None = None
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0:
            raise ContractError("grid must be 1-D, start at 0 and have >= 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ContractError("grid must be strictly increasing")
        if self.interpolation not in _INTERPOLATIONS:
            raise ContractError(f"unknown interpolation {self.interpolation!r}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        vals = {}
        for name, v in self.values.items():
            arr = np.array(v, dtype=float)
            if arr.shape != grid.shape:
                raise ContractError(f"channel {name!r} has {arr.shape} samples for {grid.size} grid points")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"channel {name!r} holds non-finite samples; flag them as unbounded")
            bound = self.bounds.get(name)
            if bound is not None and np.any(np.abs(arr) > bound * (1 + 1e-12)):
                raise ContractError(f"channel {name!r} exceeds its bound {bound}")
            arr.setflags(write=False)
            vals[name] = arr
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bounds", dict(self.bounds))
        object.__setattr__(self, "unbounded", {c: tuple((float(a), float(b)) for a, b in iv)
                                               for c, iv in self.unbounded.items()})
        object.__setattr__(self, "kicks", tuple(sorted(self.kicks, key=lambda q: q.time)))
        object.__setattr__(self, "breakpoints", tuple(sorted(set(float(b) for b in self.breakpoints))))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.values)

    def is_unbounded(self, channel: str, t: float) -> bool:
        return any(a <= t <= b for a, b in self.unbounded.get(channel, ()))

    def unbounded_mask(self, channel: str) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        for a, b in self.unbounded.get(channel, ()):
            mask |= (self.grid >= a) & (self.grid <= b)
        return mask

    def _interp(self, channel: str, t: float) -> float:
        v = self.values[channel]
        if self.interpolation == PIECEWISE_LINEAR:
            return float(np.interp(t, self.grid, v))
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        return float(v[min(max(i, 0), v.size - 1)])

    def at(self, t: float) -> dict[str, float]:
        """Channel values at time ``t``; flagged channels read as zero."""
        raw = dict(self.evaluator(t)) if self.evaluator is not None else {
            c: self._interp(c, t) for c in self.values}
        for c in self.unbounded:
            if c in raw and self.is_unbounded(c, t):
                raw[c] = 0.0
        return raw

    def segment_breaks(self) -> list[float]:
        """Times where the integrator must restart."""
        pts = set(self.breakpoints) | {q.time for q in self.kicks}
        for iv in self.unbounded.values():
            for a, b in iv:
                pts.update((a, b))
        if self.interpolation == PIECEWISE_CONSTANT and self.evaluator is None:
            pts.update(self.grid.tolist())
        return sorted(p for p in pts if 0.0 < p < self.T)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "values": {c: v.tolist() for c, v in self.values.items()},
            "interpolation": self.interpolation,
            "bounds": dict(self.bounds),
            "unbounded": {c: [list(p) for p in iv] for c, iv in self.unbounded.items()},
            "kicks": [{"time": q.time, "channel": q.channel, "area": q.area} for q in self.kicks],
            "breakpoints": list(self.breakpoints),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ControlSchedule":
        return cls(
            grid=np.asarray(data["grid"], dtype=float),
            values={c: np.asarray(v, dtype=float) for c, v in data["values"].items()},
            interpolation=data.get("interpolation", PIECEWISE_LINEAR),
            bounds=dict(data.get("bounds", {})),
            unbounded={c: tuple(tuple(p) for p in iv) for c, iv in data.get("unbounded", {}).items()},
            kicks=tuple(Kick(float(q["time"]), q["channel"], float(q["area"]))
                        for q in data.get("kicks", [])),
            breakpoints=tuple(data.get("breakpoints", [])),
            metadata=dict(data.get("metadata", {})),
        )

    def equals(self, other: "ControlSchedule") -> bool:
        """Value equality of the serialisable content."""
        return self.to_dict() == other.to_dict()


def constant_schedule(T: float, n_segments: int, values: Mapping[str, Sequence[float]],
                      bounds: Mapping[str, float | None] | None = None) -> ControlSchedule:
    """Piecewise-constant schedule with ``n_segments`` equal segments."""
    grid = np.linspace(0.0, T, n_segments + 1)
    vals = {}
    for c, v in values.items():
        v = np.asarray(v, dtype=float)
        if v.shape != (n_segments,):
            raise ContractError(f"channel {c!r} needs {n_segments} segment values")
        vals[c] = np.append(v, v[-1])
    return ControlSchedule(grid, vals, PIECEWISE_CONSTANT, bounds or {})
