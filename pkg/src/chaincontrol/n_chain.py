"""Longer chains: merging the last pair, efficiency bounds, and topology.

Two results live here.  A chain whose last two levels are (decaying,
stable) maps onto a chain one level shorter by merging that pair into a
single radius, which can only raise the reachable efficiency.  And a set of
stable levels is controllable at finite power exactly when every pair is
joined by a path that never steps between two decaying levels.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np

from .four_level import asymptotic_efficiency
from .model import ChainSystem, ContractError, build_real_generator

TYPE_I = "I"
TYPE_II = "II"


# ---------------------------------------------------------------------------
# coupling graphs


def _node_key(n):
    # total order across mixed id types; ints sort numerically
    return (0, n, "") if isinstance(n, (int, np.integer)) else (1, 0, str(n))


@dataclass(frozen=True)
class CouplingGraph:
    """Levels with decay flags, available couplings and a target subspace.

    ``decays`` maps every node to a bool or a non-negative rate; only
    whether it is non-zero matters for controllability.
    """

    decays: Mapping[Hashable, float | bool]
    edges: tuple[tuple[Hashable, Hashable], ...]
    subspace: tuple[Hashable, ...]

    def __post_init__(self):
        decays = {n: float(v) for n, v in dict(self.decays).items()}
        if any(not math.isfinite(v) or v < 0 for v in decays.values()):
            raise ContractError("decay rates must be finite and non-negative")
        seen = set()
        edges = []
        for a, b in self.edges:
            if a == b:
                raise ContractError(f"self-loop on {a!r}")
            if a not in decays or b not in decays:
                raise ContractError(f"edge ({a!r}, {b!r}) names an unknown node")
            key = frozenset((a, b))
            if key in seen:
                raise ContractError(f"duplicate edge ({a!r}, {b!r})")
            seen.add(key)
            edges.append(tuple(sorted((a, b), key=_node_key)))
        sub = tuple(sorted(dict.fromkeys(self.subspace), key=_node_key))
        for s in sub:
            if s not in decays:
                raise ContractError(f"subspace node {s!r} is not in the graph")
            if decays[s] > 0:
                raise ContractError(f"subspace node {s!r} is flagged as decaying")
        object.__setattr__(self, "decays", decays)
        object.__setattr__(self, "edges", tuple(sorted(edges, key=lambda e: tuple(map(_node_key, e)))))
        object.__setattr__(self, "subspace", sub)

    @property
    def nodes(self) -> tuple:
        return tuple(sorted(self.decays, key=_node_key))

    def is_decaying(self, n) -> bool:
        return self.decays[n] > 0.0

    def neighbours(self, n) -> list:
        out = [b for a, b in self.edges if a == n] + [a for a, b in self.edges if b == n]
        return sorted(out, key=_node_key)

    def with_edge(self, a, b) -> "CouplingGraph":
        return CouplingGraph(self.decays, self.edges + ((a, b),), self.subspace)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "decay": self.decays[n]} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
            "subspace": list(self.subspace),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CouplingGraph":
        decays = {}
        for item in data["nodes"]:
            d = item.get("decay", False)
            decays[item["id"]] = float(d) if not isinstance(d, bool) else (1.0 if d else 0.0)
        return cls(decays, tuple(tuple(e) for e in data["edges"]), tuple(data["subspace"]))


@dataclass(frozen=True)
class PathWitness:
    """An admissible path and its decomposition into type I / II segments."""

    nodes: tuple
    segments: tuple[tuple[str, tuple], ...] = field(default=())

    @property
    def length(self) -> int:
        return len(self.nodes) - 1

    def to_dict(self) -> dict:
        return {"path": list(self.nodes),
                "segments": [{"type": t, "nodes": list(s)} for t, s in self.segments]}


def segment_path(g: CouplingGraph, path: Sequence) -> tuple[tuple[str, tuple], ...]:
    """Split a path into maximal stable runs (I) and decay-bridged triples (II).

    Paths that start or end on a decaying level are left unsegmented.
    """
    if g.is_decaying(path[0]) or g.is_decaying(path[-1]):
        return ()
    segs: list[tuple[str, tuple]] = []
    run: list = [path[0]]
    i = 1
    while i < len(path):
        n = path[i]
        if g.is_decaying(n):
            if len(run) > 1:
                segs.append((TYPE_I, tuple(run)))
            segs.append((TYPE_II, (path[i - 1], n, path[i + 1])))
            run = [path[i + 1]]
            i += 2
        else:
            run.append(n)
            i += 1
    if len(run) > 1:
        segs.append((TYPE_I, tuple(run)))
    return tuple(segs)


def _admissible(g: CouplingGraph, a, b) -> bool:
    return not (g.is_decaying(a) and g.is_decaying(b))


def admissible_path_search(g: CouplingGraph, source, target) -> PathWitness | None:
    """Shortest path that never steps between two decaying levels.

    Ties between shortest paths go to the lexicographically smallest node
    sequence: distances are found by a breadth-first search from the target,
    then the path is walked from the source always taking the smallest
    neighbour one step closer.  ``None`` if no such path exists.
    """
    if source not in g.decays or target not in g.decays:
        raise ContractError("source and target must be nodes of the graph")
    adj = {n: [m for m in g.neighbours(n) if _admissible(g, n, m)] for n in g.nodes}
    dist = {target: 0}
    queue = deque([target])
    while queue:
        n = queue.popleft()
        for m in adj[n]:
            if m not in dist:
                dist[m] = dist[n] + 1
                queue.append(m)
    if source not in dist:
        return None
    path = [source]
    while path[-1] != target:
        d = dist[path[-1]]
        path.append(next(m for m in adj[path[-1]] if dist.get(m) == d - 1))
    return PathWitness(tuple(path), segment_path(g, path))


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    witnesses: Mapping[tuple, PathWitness]
    counterexample: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "controllable": self.controllable,
            "counterexample": list(self.counterexample) if self.counterexample else None,
            "witnesses": [{"pair": list(p), **w.to_dict()} for p, w in self.witnesses.items()],
        }


def is_controllable(g: CouplingGraph) -> ControllabilityReport:
    """Decide finite-power controllability on the subspace of ``g``.

    Pairs are visited in lexicographic order; the first pair without an
    admissible path is returned as the counterexample.
    """
    if not g.subspace:
        raise ContractError("subspace must not be empty")
    witnesses = {}
    for a, b in combinations(g.subspace, 2):
        w = admissible_path_search(g, a, b)
        if w is None:
            return ControllabilityReport(False, witnesses, (a, b))
        witnesses[(a, b)] = w
    return ControllabilityReport(True, witnesses)


def example_graph(name: str) -> CouplingGraph:
    """Small reference topologies on the subspace ``{1, 2, 3, 4}``.

    ``"controllable"``: decaying levels 5, 6, 7 bridge single gaps
    (1-5-2, 3-6-4) and 2-3 couple directly; the decaying pair 6-7 is present
    but never needed.  ``"blocked"``: 1, 2, 3 couple directly while 4 is
    reached only across the decaying run 5-6-7.
    """
    dec = {1: 0, 2: 0, 3: 0, 4: 0, 5: 1, 6: 1, 7: 1}
    if name == "controllable":
        edges = ((1, 5), (5, 2), (2, 3), (3, 6), (6, 7), (7, 4), (6, 4))
    elif name == "blocked":
        edges = ((1, 2), (2, 3), (1, 5), (5, 6), (6, 7), (7, 4))
    else:
        raise ContractError(f"unknown example {name!r}")
    return CouplingGraph(dec, edges, (1, 2, 3, 4))


def chain_graph(sys: ChainSystem) -> CouplingGraph:
    """Coupling graph of a chain (levels numbered from 1)."""
    n = sys.n_levels
    dec = {i + 1: sys.decay_rates[i] for i in range(n)}
    stable = tuple(i for i in dec if dec[i] == 0.0)
    return CouplingGraph(dec, tuple((i, i + 1) for i in range(1, n)), stable)


# ---------------------------------------------------------------------------
# merging the last pair of a chain


@dataclass(frozen=True)
class ReducedChain:
    """Chain with its last two levels merged into ``y = sqrt(x_{N-1}^2 + x_N^2)``.

    The merged level couples through ``Omega_{N-2} cos(theta)`` and decays at
    ``k_{N-1} cos(theta)^2`` with ``tan(theta) = x_N / x_{N-1}``.  Because
    ``y >= x_N``, any efficiency reached on the original chain is also
    reached by ``y`` in the reduced one.
    """

    original: ChainSystem

    @property
    def n_levels(self) -> int:
        return self.original.n_levels - 1

    def merge(self, x: Sequence[float]) -> tuple[np.ndarray, float]:
        """Reduced state and mixing angle for a full state ``x``."""
        x = np.asarray(x, dtype=float)
        y = np.append(x[:-2], math.hypot(x[-2], x[-1]))
        theta = 0.0 if y[-1] == 0.0 else math.atan2(x[-1], x[-2])
        return y, theta

    def decay_rates(self, theta: float) -> tuple[float, ...]:
        k = self.original.decay_rates
        return k[:-2] + (k[-2] * math.cos(theta) ** 2,)

    def generator(self, controls: Sequence[float], theta: float,
                  drop_last_decay: bool = False) -> np.ndarray:
        """Reduced matrix; ``controls`` are the original chain's couplings.

        The final coupling (into the last level) drops out after merging.
        ``drop_last_decay`` gives the loss-free comparison dynamics used to
        pass the bound on to the shorter chain.
        """
        controls = list(controls)
        if len(controls) != self.original.n_levels - 1:
            raise ContractError("need one coupling per original link")
        c = math.cos(theta)
        m = build_real_generator(self.original, controls)[:-1, :-1]
        m[-2, -1] *= c
        m[-1, -2] *= c
        m[-1, -1] = 0.0 if drop_last_decay else -self.original.decay_rates[-2] * c * c
        return m

    def shorter_chain_controls(self, controls: Sequence[float], theta: float) -> list[float]:
        """Couplings of the (N-1)-chain that reproduce the loss-free reduced dynamics."""
        out = list(controls[:-1])
        out[-1] = out[-1] * math.cos(theta)
        return out

    def shorter_chain(self) -> ChainSystem:
        """The (N-1)-level chain whose efficiency bounds the original."""
        k = self.original.decay_rates
        return ChainSystem(self.n_levels, k[:-2] + (0.0,), self.original.coupling_bound)

    def to_dict(self) -> dict:
        return {"original": self.original.to_dict(), "n_levels": self.n_levels,
                "relation": "y_last >= x_last", "merged": [self.n_levels, self.n_levels + 1]}


def reduce_chain(sys: ChainSystem) -> ReducedChain:
    if sys.n_levels < 4:
        raise ContractError("reduction needs at least four levels")
    if sys.decay_rates[-1] != 0.0 or sys.decay_rates[-2] <= 0.0:
        raise ContractError("last level must be stable and the one before it decaying")
    return ReducedChain(sys)


def decaying_runs(sys: ChainSystem) -> list[int]:
    """Lengths of maximal runs of consecutive decaying levels."""
    runs, cur = [], 0
    for k in sys.decay_rates:
        if k > 0:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    if cur:
        runs.append(cur)
    return runs


def chain_efficiency_upper_bound(n_decaying_run: int, xi: float) -> float:
    """Infinite-time efficiency bound across a run of decaying levels.

    A single decaying level can be crossed without loss in the adiabatic
    limit; two or more cap the efficiency at ``sqrt(1 + xi^2) - xi``.
    """
    if n_decaying_run < 0 or xi < 0:
        raise ContractError("need a non-negative run length and xi")
    if n_decaying_run <= 1:
        return 1.0
    return asymptotic_efficiency(xi)
