"""Brute-force checks of the analytic optima on piecewise-constant controls.

Controls live in the reduced (polar) variables: mixing cosines in [0, 1]
and, optionally, the bounded couplings in [0, A].  On each segment the
generator is constant, so a schedule is propagated exactly by a product of
matrix exponentials.  Search, ascent and refinement all reduce to batched
``expm`` calls.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .model import PIECEWISE_CONSTANT, ChainSystem, ContractError, ControlSchedule
from .propagator import polar_channels

UNIFORM, BANG_BANG, CONSTANT, RAMP = "uniform", "bang-bang", "constant", "ramp"
STRATA = (UNIFORM, BANG_BANG, CONSTANT, RAMP)


class OracleDiagnosticsError(ArithmeticError):
    """The objective turned non-finite during a search."""


@dataclass(frozen=True, eq=False)
class DiscretizedControlProblem:
    """Maximise the last reduced amplitude at ``T`` over ``n_segments`` pieces.

    With ``free_couplings`` the bounded couplings become decision variables
    in ``[0, A]``; otherwise they sit at ``A``.
    """

    sys: ChainSystem
    T: float
    n_segments: int
    free_couplings: bool = False
    target: int = -1

    def __post_init__(self):
        if self.n_segments < 1:
            raise ContractError("need at least one segment")
        if not self.T > 0:
            raise ContractError("T must be positive")
        if self.sys.n_levels < 3:
            raise ContractError("need at least three levels")

    @property
    def channels(self) -> tuple[str, ...]:
        names = polar_channels(self.sys)
        if self.free_couplings:
            return names
        return tuple(c for c in names if c.startswith("u"))

    @property
    def dim(self) -> int:
        return 2 if self.sys.n_levels == 3 else self.sys.n_levels - 2

    @property
    def dt(self) -> float:
        return self.T / self.n_segments

    def bounds(self) -> list[tuple[float, float]]:
        A = self.sys.coupling_bound
        per = [(0.0, 1.0) if c.startswith("u") else (0.0, A) for c in self.channels]
        return per * self.n_segments

    def lower_upper(self) -> tuple[np.ndarray, np.ndarray]:
        b = np.array(self.bounds()).reshape(self.n_segments, len(self.channels), 2)
        return b[..., 0], b[..., 1]

    def with_segments(self, n: int) -> "DiscretizedControlProblem":
        return DiscretizedControlProblem(self.sys, self.T, n, self.free_couplings, self.target)

    # --- dynamics --------------------------------------------------------

    def generators(self, X: np.ndarray) -> np.ndarray:
        """Reduced generators for controls ``X`` of shape ``(..., n_seg, n_ch)``."""
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        d = self.dim
        k = self.sys.decay_rates
        A = self.sys.coupling_bound
        vals = {c: X[..., i] for i, c in enumerate(self.channels)}
        G = np.zeros(lead + (d, d))
        if self.sys.n_levels == 3:
            u = vals["u"]
            s = vals.get("stokes", A)
            G[..., 0, 0] = -k[1] * u * u
            G[..., 0, 1] = -s * u
            G[..., 1, 0] = s * u
            return G
        u1, u2 = vals["u1"], vals["u2"]
        names = polar_channels(self.sys)[1:-1]
        for j in range(d):
            G[..., j, j] = -k[j + 1]
        G[..., 0, 0] *= u1 * u1
        G[..., -1, -1] *= u2 * u2
        for j, name in enumerate(names):
            w = vals.get(name, A) * np.ones(lead)
            if j == 0:
                w = w * u1
            if j == d - 2:
                w = w * u2
            G[..., j, j + 1] = -w
            G[..., j + 1, j] = w
        return G

    def propagators(self, X: np.ndarray) -> np.ndarray:
        G = self.generators(X)
        return expm(G * self.dt)

    def _r0(self) -> np.ndarray:
        r = np.zeros(self.dim)
        r[0] = 1.0
        return r

    def objective_batch(self, Xs: np.ndarray) -> np.ndarray:
        """Efficiencies for a stack of schedules, shape ``(n_trials, n_seg, n_ch)``."""
        P = self.propagators(Xs)
        r = np.broadcast_to(self._r0(), (P.shape[0], self.dim)).copy()
        for j in range(self.n_segments):
            r = np.einsum("nij,nj->ni", P[:, j], r)
        return r[:, self.target]

    def objective(self, x: np.ndarray) -> float:
        X = self.reshape(x)
        return float(self.objective_batch(X[None])[0])

    def reshape(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(self.n_segments, len(self.channels))

    def gradient(self, x, rel_step: float = 1e-6) -> np.ndarray:
        """Central finite differences with step ``rel_step * max(|x|, 1)``.

        Perturbing one segment only changes its own propagator, so each
        difference is ``w_j (P_j(+h) - P_j(-h)) s_j`` with the forward state
        ``s_j`` and backward row ``w_j`` computed once.
        """
        X = self.reshape(x)
        n, m = X.shape
        P = self.propagators(X)
        d = self.dim
        s = np.empty((n + 1, d))
        s[0] = self._r0()
        for j in range(n):
            s[j + 1] = P[j] @ s[j]
        w = np.empty((n + 1, d))
        w[n] = np.eye(d)[self.target]
        for j in range(n - 1, -1, -1):
            w[j] = w[j + 1] @ P[j]
        h = rel_step * np.maximum(np.abs(X), 1.0)
        Xp = np.repeat(X[:, None, :], m, axis=1)
        Xm = Xp.copy()
        idx = np.arange(m)
        Xp[:, idx, idx] += h
        Xm[:, idx, idx] -= h
        Pp = expm(self.generators(Xp) * self.dt)
        Pm = expm(self.generators(Xm) * self.dt)
        dP = Pp - Pm
        g = np.einsum("ni,nmij,nj->nm", w[1:], dP, s[:-1]) / (2.0 * h)
        return g.ravel()

    def to_schedule(self, x) -> ControlSchedule:
        X = self.reshape(x)
        grid = np.linspace(0.0, self.T, self.n_segments + 1)
        vals = {c: np.append(X[:, i], X[-1, i]) for i, c in enumerate(self.channels)}
        bounds = {c: (1.0 if c.startswith("u") else self.sys.coupling_bound) for c in self.channels}
        return ControlSchedule(grid, vals, PIECEWISE_CONSTANT, bounds,
                               metadata={"kind": "oracle"})

    def sample(self, fn: Callable[[float], Sequence[float]], rule: str = "midpoint") -> np.ndarray:
        """Discretise a continuous control; ``rule`` is ``"midpoint"`` or ``"average"``."""
        edges = np.linspace(0.0, self.T, self.n_segments + 1)
        if rule == "midpoint":
            rows = [fn(0.5 * (a + b)) for a, b in zip(edges[:-1], edges[1:])]
        elif rule == "average":
            nodes, weights = np.polynomial.legendre.leggauss(8)
            rows = []
            for a, b in zip(edges[:-1], edges[1:]):
                ts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
                rows.append(0.5 * np.sum(weights[:, None] * np.array([fn(t) for t in ts]), axis=0))
        else:
            raise ContractError(f"unknown rule {rule!r}")
        X = np.atleast_2d(np.array(rows, dtype=float)).reshape(self.n_segments, -1)
        lo, hi = self.lower_upper()
        return np.clip(X, lo, hi).ravel()


# ---------------------------------------------------------------------------
# random search


@dataclass(frozen=True, eq=False)
class SearchResult:
    best_efficiency: float
    best_index: int
    best_controls: np.ndarray
    efficiencies: np.ndarray
    strata: tuple[str, ...]

    def best_schedule(self, prob: DiscretizedControlProblem) -> ControlSchedule:
        return prob.to_schedule(self.best_controls)


def _draw(prob: DiscretizedControlProblem, rng: np.random.Generator, stratum: str) -> np.ndarray:
    lo, hi = prob.lower_upper()
    n, m = lo.shape
    if stratum == UNIFORM:
        z = rng.random((n, m))
    elif stratum == BANG_BANG:
        z = rng.integers(0, 2, size=(n, m)).astype(float)
    elif stratum == CONSTANT:
        z = np.broadcast_to(rng.random((1, m)), (n, m))
    else:
        z = np.sort(rng.random((n, m)), axis=0)
    return lo + (hi - lo) * z



def random_search(prob: DiscretizedControlProblem, n_trials: int, seed: int,
                  workers: int | None = None, chunk: int = 250) -> SearchResult:
    """Best of ``n_trials`` random admissible schedules.

    Trial ``i`` draws from its own spawned seed and cycles through uniform,
    bang-bang, constant and sorted-ramp samples.  Chunks may be evaluated on
    ``workers`` threads; results are gathered by trial index, so the outcome
    does not depend on scheduling.
    """
    if n_trials < 1:
        raise ContractError("need at least one trial")
    children = np.random.SeedSequence(seed).spawn(n_trials)

    def run(lo_hi):
        a, b = lo_hi
        X = np.stack([_draw(prob, np.random.default_rng(children[i]), STRATA[i % 4])
                      for i in range(a, b)])
        return a, X, prob.objective_batch(X)

    spans = [(a, min(a + chunk, n_trials)) for a in range(0, n_trials, chunk)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    parts.sort(key=lambda p: p[0])
    controls = np.concatenate([p[1] for p in parts])
    effs = np.concatenate([p[2] for p in parts])
    if not np.all(np.isfinite(effs)):
        raise OracleDiagnosticsError("non-finite efficiency in random search")
    best = int(np.argmax(effs))
    return SearchResult(float(effs[best]), best, controls[best].ravel(), effs,
                        tuple(STRATA[i % 4] for i in range(n_trials)))


# ---------------------------------------------------------------------------
# local ascent


@dataclass(frozen=True, eq=False)
class AscentResult:
    initial_efficiency: float
    efficiency: float
    controls: np.ndarray
    history: tuple[float, ...]
    iterations: int
    message: str

    @property
    def improvement(self) -> float:
        return self.efficiency - self.initial_efficiency


def local_ascent(prob: DiscretizedControlProblem, init, max_iter: int = 500,
                 ftol: float = 1e-10, gtol: float = 1e-10,
                 rel_step: float = 1e-6) -> AscentResult:
    """Projected quasi-Newton ascent (L-BFGS-B) from an admissible start.

    Stops once an iteration improves the efficiency by less than ``ftol``
    or after ``max_iter`` iterations.  The accepted iterates form
    ``history``, which is non-decreasing.
    """
    x0 = np.asarray(init, dtype=float).ravel()
    lo, hi = (np.array(b) for b in zip(*prob.bounds()))
    if x0.size != lo.size:
        raise ContractError(f"init has {x0.size} values, problem needs {lo.size}")
    if np.any(x0 < lo - 1e-12) or np.any(x0 > hi + 1e-12):
        raise ContractError("initial schedule is not admissible")
    x0 = np.clip(x0, lo, hi)

    def f(x):
        v = prob.objective(x)
        if not math.isfinite(v):
            raise OracleDiagnosticsError(f"non-finite objective at x={x!r}")
        return -v

    def jac(x):
        g = prob.gradient(x, rel_step)
        if not np.all(np.isfinite(g)):
            raise OracleDiagnosticsError("non-finite gradient")
        return -g

    e0 = -f(x0)
    history = [e0]

    def record(xk):
        history.append(prob.objective(xk))

    res = minimize(f, x0, jac=jac, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   callback=record, options={"maxiter": max_iter, "ftol": ftol, "gtol": gtol})
    x = np.clip(res.x, lo, hi)
    e = prob.objective(x)
    if e < e0:
        # never hand back something worse than the start
        x, e = x0, e0
    return AscentResult(e0, e, x, tuple(history), int(res.nit), str(res.message))


# ---------------------------------------------------------------------------
# resolution study


@dataclass(frozen=True)
class RefinementReport:
    segments: tuple[int, ...]
    efficiencies: tuple[float, ...]
    extrapolated: float | None
    bound: float | None = None
    gaps: tuple[float, ...] = field(default=())

    @property
    def monotone(self) -> bool:
        e = self.efficiencies
        return all(b >= a - 1e-8 for a, b in zip(e, e[1:]))

    def to_dict(self) -> dict:
        return {"segments": list(self.segments), "efficiencies": list(self.efficiencies),
                "extrapolated": self.extrapolated, "bound": self.bound, "gaps": list(self.gaps),
                "monotone": self.monotone}


def upsample(x: np.ndarray, n_from: int, n_to: int, n_ch: int) -> np.ndarray:
    """Embed a piecewise-constant schedule on a finer uniform grid."""
    if n_to % n_from:
        raise ContractError("finer grid must be a multiple of the coarse one")
    X = np.asarray(x).reshape(n_from, n_ch)
    return np.repeat(X, n_to // n_from, axis=0).ravel()


def refine_and_extrapolate(prob: DiscretizedControlProblem, segment_counts: Sequence[int],
                           init: Callable[[DiscretizedControlProblem], np.ndarray] | None = None,
                           bound: float | None = None, max_iter: int = 500) -> RefinementReport:
    """Best ascent efficiency at increasing resolution.

    Each level starts from the previous optimum refined onto the finer grid
    (exactly representable when counts divide), so the sequence can only
    rise up to optimiser tolerance.  An Aitken estimate of the limit is
    reported when the last three differences allow it.
    """
    counts = tuple(int(n) for n in segment_counts)
    if list(counts) != sorted(counts) or len(set(counts)) != len(counts):
        raise ContractError("segment counts must be strictly ascending")
    effs = []
    x_prev = None
    for i, n in enumerate(counts):
        p = prob.with_segments(n)
        m = len(p.channels)
        if x_prev is None:
            start = init(p) if init is not None else np.full(n * m, 0.5)
            lo, hi = (np.array(b) for b in zip(*p.bounds()))
            start = np.clip(start, lo, hi)
        elif n % counts[i - 1] == 0:
            start = upsample(x_prev, counts[i - 1], n, m)
        else:
            start = p.sample(lambda t, xp=x_prev, q=prob.with_segments(counts[i - 1]):
                             q.reshape(xp)[min(int(t / q.dt), q.n_segments - 1)])
        r = local_ascent(p, start, max_iter=max_iter)
        effs.append(r.efficiency)
        x_prev = r.controls
    extrap = None
    if len(effs) >= 3:
        d1, d2 = effs[-2] - effs[-3], effs[-1] - effs[-2]
        if d1 > 0 and 0 <= d2 < d1:
            extrap = effs[-1] + d2 * d2 / (d1 - d2)
    gaps = tuple(bound - e for e in effs) if bound is not None else ()
    return RefinementReport(counts, tuple(effs), extrap, bound, gaps)
