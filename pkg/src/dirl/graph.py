"""Abstract reachability graphs compiled from specifications.

A compiled graph is a DAG whose vertices carry subgoal predicates and whose
edges carry safe-trajectory sets. Safe sets only ever take two shapes:
``Always(b)`` (every state satisfies ``b``) and ``Concat(b1, b2)`` (a
non-empty ``b1`` prefix followed by a non-empty ``b2`` suffix). Final
vertices additionally carry a terminal set, always of the ``Always`` shape.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .spec_lang import (
    TRUE, Achieve, Choice, Ensuring, Predicate, Seq, Spec,
    _as_states, conj, eval_bool, pretty_pred,
)

__all__ = [
    "Always", "Concat", "SafeSet", "intersect", "AbstractGraph", "compile_spec",
    "SafeMonitor", "safe_membership", "prefix_membership", "achieves_edge",
    "satisfies_graph", "EdgePreconditionError", "to_dot", "to_text",
]


@dataclass(frozen=True)
class Always:
    pred: Predicate

    def preds(self):
        return (self.pred,)

    def tag(self) -> str:
        return f"always({pretty_pred(self.pred)})"


@dataclass(frozen=True)
class Concat:
    first: Predicate
    second: Predicate

    def preds(self):
        return (self.first, self.second)

    def tag(self) -> str:
        return f"concat({pretty_pred(self.first)} ; {pretty_pred(self.second)})"


SafeSet = Union[Always, Concat]


def intersect(z: SafeSet, b: Predicate) -> SafeSet:
    """``z`` intersected with the trajectories whose states all satisfy ``b``."""
    if isinstance(z, Always):
        return Always(conj(z.pred, b))
    return Concat(conj(z.first, b), conj(z.second, b))


Edge = tuple[int, int]


@dataclass(frozen=True)
class AbstractGraph:
    """DAG over vertices ``0 .. n_vertices-1``; vertex ids are a topological order."""

    n_vertices: int
    edges: tuple[Edge, ...]
    initial: int
    finals: frozenset
    beta: tuple
    safe: Mapping[Edge, SafeSet]
    term: Mapping[int, SafeSet] = field(default_factory=dict)

    @property
    def vertices(self) -> range:
        return range(self.n_vertices)

    def out_edges(self, u: int) -> list[Edge]:
        return [e for e in self.edges if e[0] == u]

    def in_edges(self, u: int) -> list[Edge]:
        return [e for e in self.edges if e[1] == u]

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; raises ``ValueError`` on a cycle."""
        indeg = [0] * self.n_vertices
        for _, v in self.edges:
            indeg[v] += 1
        ready = [u for u in self.vertices if indeg[u] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for _, v in self.out_edges(u):
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(ready, v)
        if len(order) != self.n_vertices:
            raise ValueError("graph has a cycle")
        return order

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
        except ValueError:
            return False
        return True

    def term_set(self, u: int) -> SafeSet:
        return self.term.get(u, Always(TRUE))

    def all_predicates(self) -> set:
        preds = set(self.beta)
        for z in itertools.chain(self.safe.values(), self.term.values()):
            preds.update(z.preds())
        return preds


# ---------------------------------------------------------------------------
# Compilation


class _Raw:
    """Mutable graph under construction; vertex ids come from a shared counter."""

    def __init__(self, init, verts, beta, edges, safe, finals, term):
        self.init = init
        self.verts = verts
        self.beta = beta
        self.edges = edges
        self.safe = safe
        self.finals = finals
        self.term = term


def _build(phi: Spec, fresh) -> _Raw:
    if isinstance(phi, Achieve):
        u0, ub = next(fresh), next(fresh)
        return _Raw(u0, [u0, ub], {u0: TRUE, ub: phi.pred}, [(u0, ub)],
                    {(u0, ub): Always(TRUE)}, [ub], {ub: Always(TRUE)})

    if isinstance(phi, Ensuring):
        g = _build(phi.spec, fresh)
        b = phi.pred
        g.beta = {u: (p if u == g.init else conj(p, b)) for u, p in g.beta.items()}
        g.safe = {e: intersect(z, b) for e, z in g.safe.items()}
        g.term = {u: intersect(z, b) for u, z in g.term.items()}
        return g

    if isinstance(phi, Seq):
        g1, g2 = _build(phi.first, fresh), _build(phi.second, fresh)
        start = [e for e in g2.edges if e[0] == g2.init]
        edges = list(g1.edges) + [e for e in g2.edges if e[0] != g2.init]
        safe = dict(g1.safe)
        safe.update({e: z for e, z in g2.safe.items() if e[0] != g2.init})
        for f in g1.finals:
            tz = g1.term[f]
            for e2 in start:
                z2 = g2.safe[e2]
                assert isinstance(tz, Always) and isinstance(z2, Always), \
                    "terminal and initial-edge safe sets must be Always"
                edges.append((f, e2[1]))
                safe[(f, e2[1])] = Concat(tz.pred, z2.pred)
        beta = dict(g1.beta)
        beta.update({u: p for u, p in g2.beta.items() if u != g2.init})
        verts = g1.verts + [u for u in g2.verts if u != g2.init]
        return _Raw(g1.init, verts, beta, edges, safe, list(g2.finals), dict(g2.term))

    assert isinstance(phi, Choice)
    g1, g2 = _build(phi.left, fresh), _build(phi.right, fresh)
    u0 = next(fresh)
    verts, edges, safe, beta = [u0], [], {}, {u0: TRUE}
    for g in (g1, g2):
        assert not any(e[1] == g.init for e in g.edges), "initial vertex has an incoming edge"
        verts += [u for u in g.verts if u != g.init]
        beta.update({u: p for u, p in g.beta.items() if u != g.init})
        for e in g.edges:
            new = (u0, e[1]) if e[0] == g.init else e
            edges.append(new)
            safe[new] = g.safe[e]
    return _Raw(u0, verts, beta, edges, safe, g1.finals + g2.finals, {**g1.term, **g2.term})


def compile_spec(phi: Spec) -> AbstractGraph:
    """Compile ``phi`` into its abstract graph with terminal sets."""
    raw = _build(phi, itertools.count())
    # renumber in a deterministic topological order (smallest construction id first)
    indeg = {u: 0 for u in raw.verts}
    succ = {u: [] for u in raw.verts}
    for u, v in raw.edges:
        indeg[v] += 1
        succ[u].append(v)
    ready = [u for u in raw.verts if indeg[u] == 0]
    assert ready == [raw.init], "initial vertex must be the unique source"
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    assert len(order) == len(raw.verts), "compiled graph has a cycle"
    ids = {u: i for i, u in enumerate(order)}

    edges = tuple(sorted((ids[u], ids[v]) for u, v in raw.edges))
    safe = {(ids[u], ids[v]): z for (u, v), z in raw.safe.items()}
    term = {ids[u]: z for u, z in raw.term.items()}
    for z in term.values():
        assert isinstance(z, Always)
    beta = tuple(raw.beta[u] for u in order)
    return AbstractGraph(len(order), edges, 0, frozenset(ids[u] for u in raw.finals),
                         beta, safe, term)


# ---------------------------------------------------------------------------
# Safe-set monitors


class SafeMonitor:
    """Online membership test for a safe set, vectorised over a batch.

    For ``Concat(b1, b2)`` two bits are tracked per trajectory: ``A`` (``b1``
    has held on every state so far) and ``C`` (some split is valid and ``b2``
    has held since it). With ``A_{-1} = C_{-1} = False``::

        C_i = b2(s_i) and (A_{i-1} or C_{i-1})
        A_i = b1(s_i)                      if i == 0
        A_i = A_{i-1} and b1(s_i)          otherwise
    """

    def __init__(self, z: SafeSet, batch_shape: tuple = ()):
        self.z = z
        self.started = np.zeros(batch_shape, dtype=bool)
        self.a = np.zeros(batch_shape, dtype=bool)
        self.c = np.zeros(batch_shape, dtype=bool)

    @property
    def member(self) -> np.ndarray:
        """Whether the states fed so far form a member of the safe set."""
        if isinstance(self.z, Always):
            return self.a
        return self.c

    def feed_bits(self, b1, b2=None, mask=None) -> np.ndarray:
        """Append one state given its predicate bits; rows outside ``mask`` are left untouched."""
        b1 = np.asarray(b1, dtype=bool)
        a = np.where(self.started, self.a & b1, b1)
        c = self.c
        if isinstance(self.z, Concat):
            c = np.asarray(b2, dtype=bool) & (self.a | self.c)
        if mask is None:
            self.a, self.c = a, c
            self.started = np.ones_like(self.started)
        else:
            mask = np.asarray(mask, dtype=bool)
            self.a = np.where(mask, a, self.a)
            self.c = np.where(mask, c, self.c)
            self.started = self.started | mask
        return self.member

    def feed(self, s, mask=None) -> np.ndarray:
        if isinstance(self.z, Always):
            return self.feed_bits(eval_bool(self.z.pred, s), mask=mask)
        return self.feed_bits(eval_bool(self.z.first, s), eval_bool(self.z.second, s), mask)

    def reset(self, mask) -> None:
        """Forget history for batch entries selected by ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        self.started = self.started & ~mask
        self.a = self.a & ~mask
        self.c = self.c & ~mask


def safe_membership(z: SafeSet, zeta) -> bool:
    mon = SafeMonitor(z)
    for s in _as_states(zeta):
        mon.feed(s)
    return bool(mon.member)


def prefix_membership(z: SafeSet, table: Mapping, lo: int = 0) -> np.ndarray:
    """Membership of ``zeta[lo:j]`` for every ``j >= lo`` in one vectorised pass.

    ``table`` maps each predicate of ``z`` to its Boolean values along the
    trajectory. Entry ``k`` of the result refers to ``j = lo + k``.
    """
    if isinstance(z, Always):
        return np.logical_and.accumulate(table[z.pred][lo:])
    b1 = table[z.first][lo:]
    b2 = table[z.second][lo:]
    n = len(b1)
    lead = int(np.argmin(b1)) if not b1.all() else n  # length of the b1 run from lo
    idx = np.arange(n)
    last_false = np.maximum.accumulate(np.where(b2, -1, idx))
    return b2 & (idx >= 1) & (lead >= 1) & (last_false < lead)


class EdgePreconditionError(ValueError):
    """The trajectory does not start in the source region of the edge."""


def achieves_edge(zeta, e: Edge, G: AbstractGraph) -> Optional[int]:
    """Smallest ``i`` at which ``zeta`` safely reaches the target of ``e``.

    ``i = 0`` only counts for edges leaving the initial vertex.
    """
    u, v = e
    states = _as_states(zeta)
    if not eval_bool(G.beta[u], states[0]):
        raise EdgePreconditionError(f"s_0 is not in the source region of edge {e}")
    mon = SafeMonitor(G.safe[e])
    target = G.beta[v]
    for i, s in enumerate(states):
        member = mon.feed(s)
        if i == 0 and u != G.initial:
            continue
        if member and eval_bool(target, s):
            return i
    return None


def satisfies_graph(zeta, G: AbstractGraph) -> bool:
    """Decide whether a finite trajectory satisfies ``G`` with its terminal sets.

    Dynamic programming over (vertex, index) pairs: ``reached[u][i]`` means
    some path from the initial vertex arrives at ``u`` exactly at ``s_i``.
    """
    states = _as_states(zeta)
    n = len(states)
    table = {b: np.atleast_1d(np.asarray(eval_bool(b, states))) for b in G.all_predicates()}
    reached = np.zeros((G.n_vertices, n), dtype=bool)
    reached[G.initial, 0] = table[G.beta[G.initial]][0]
    out = {u: G.out_edges(u) for u in G.vertices}
    for u in G.topological_order():
        for i in np.flatnonzero(reached[u]):
            if u in G.finals and prefix_membership(G.term_set(u), table, i)[-1]:
                return True
            for e in out[u]:
                ok = prefix_membership(G.safe[e], table, i) & table[G.beta[e[1]]][i:]
                if u != G.initial:
                    ok[0] = False
                reached[e[1], i:] |= ok
    return False


# ---------------------------------------------------------------------------
# Export


def to_text(G: AbstractGraph) -> str:
    lines = [f"vertices {G.n_vertices}", f"edges {len(G.edges)}",
             f"initial {G.initial}", "finals " + " ".join(str(u) for u in sorted(G.finals))]
    for u in G.vertices:
        lines.append(f"vertex {u} {pretty_pred(G.beta[u])}")
    for e in G.edges:
        lines.append(f"edge {e[0]} {e[1]} {G.safe[e].tag()}")
    for u in sorted(G.term):
        lines.append(f"term {u} {G.term[u].tag()}")
    return "\n".join(lines) + "\n"


def to_dot(G: AbstractGraph, name: str = "G") -> str:
    def q(s: str) -> str:
        return '"' + s.replace('"', r'\"') + '"'

    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for u in G.vertices:
        shape = "doublecircle" if u in G.finals else "circle"
        label = f"{u}: {pretty_pred(G.beta[u])}"
        lines.append(f"  {u} [shape={shape}, label={q(label)}];")
    for e in G.edges:
        lines.append(f"  {e[0]} -> {e[1]} [label={q(G.safe[e].tag())}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
