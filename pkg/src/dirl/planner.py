"""Lazy Dijkstra over the abstract graph, training edge policies on demand.

Vertices are popped in order of their best known path cost. Popping ``u``
fixes its shortest path ``rho_u`` and the induced start distribution
``eta_u`` (states where rollouts of the path policy reach ``beta(u)``); only
then are policies for ``u``'s outgoing edges trained and their success
probabilities estimated. Edge cost is ``-log p``, path cost the sum.

Learning is delegated to a backend so the search can be exercised with
fixed synthetic probabilities (see :class:`FixedProbBackend`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .ars import ArsConfig, EdgePolicy, learn_edge_policy, run_edge_episodes
from .graph import AbstractGraph, SafeMonitor, satisfies_graph
from .spec_lang import Trajectory, eval_bool

__all__ = [
    "DirlConfig", "DirlState", "DirlResult", "CandidatePath", "PathPolicy",
    "PathRollout", "PlannerFailure", "EdgeStarvation", "StepCounter",
    "EmpiricalSampler", "ArsBackend", "FixedProbBackend",
    "path_cost", "clamp_prob", "estimate_edge_prob", "nearest_vertex",
    "shortest_path", "reach_distribution", "run_path", "run_dirl",
    "evaluate_policy", "certificate_check",
]


class PlannerFailure(RuntimeError):
    pass


class EdgeStarvation(RuntimeError):
    def __init__(self, edge, successes: int, rollouts: int):
        super().__init__(f"edge {edge[0]}->{edge[1]}: only {successes} successes in {rollouts} rollouts")
        self.edge = edge
        self.successes = successes
        self.rollouts = rollouts


@dataclass
class StepCounter:
    """Environment steps, split by what they were spent on (train/estimate/reach)."""

    steps: int = 0
    by_kind: dict = field(default_factory=dict)

    def add(self, n: int, kind: str = "other") -> None:
        self.steps += int(n)
        self.by_kind[kind] = self.by_kind.get(kind, 0) + int(n)


@dataclass(frozen=True)
class DirlConfig:
    ars: ArsConfig = ArsConfig()
    n_estimate: int = 200        # M, rollouts per edge-probability estimate
    buffer_size: int = 500       # B_r
    buffer_min: int = 50         # B_min
    rollout_cap: int = 20        # reach rollouts capped at rollout_cap * B_r
    eval_rollouts: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_estimate < 1:
            raise ValueError("n_estimate must be at least 1")
        if not 1 <= self.buffer_min <= self.buffer_size:
            raise ValueError("need 1 <= buffer_min <= buffer_size")


def clamp_prob(p: float, n: int) -> float:
    return float(min(max(p, 1.0 / (2 * n)), 1.0))


def path_cost(probs: Sequence[float]) -> float:
    for p in probs:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"edge probability {p} outside (0, 1]")
    return float(sum(-math.log(p) for p in probs))


# ---------------------------------------------------------------------------
# Path policies


class PathPolicy:
    """Runs edge policies along ``path`` in turn, switching when the current edge is achieved.

    Stateful and batched: the first call after :meth:`reset` takes the
    initial state(s); every later call takes the state(s) after the previous
    action. Achievement of an edge is checked online with the same rule as
    :func:`achieves_edge` (index 0 counts only on the first edge). Once the
    last edge is achieved the policy outputs zero speed.
    """

    def __init__(self, G: AbstractGraph, path: Sequence[int], policies: dict):
        self.G = G
        self.path = tuple(path)
        if self.path[0] != G.initial:
            raise ValueError("path must start at the initial vertex")
        self.edges = list(zip(self.path[:-1], self.path[1:]))
        self.policies = {e: policies[e] for e in self.edges}
        self._targets = [G.beta[v] for _, v in self.edges]
        self.reset()

    def reset(self) -> None:
        self.j = None

    @property
    def k(self) -> int:
        return len(self.edges)

    def _start(self, s: np.ndarray) -> None:
        P = len(s)
        self.j = np.zeros(P, dtype=int)
        self.seg = np.zeros(P, dtype=int)
        self.reach_state = np.full((P, s.shape[-1]), np.nan)
        self._mons = [SafeMonitor(self.G.safe[e], (P,)) for e in self.edges]
        if self.k:
            self._mons[0].feed(s)
        self._check(s)

    @property
    def done(self) -> np.ndarray:
        return self.j == self.k

    def _check(self, s: np.ndarray) -> None:
        for idx in range(self.k):
            rows = (self.j == idx) & ((self.seg >= 1) | (idx == 0))
            if not rows.any():
                continue
            hit = rows & self._mons[idx].member & eval_bool(self._targets[idx], s)
            if not hit.any():
                continue
            self.j = self.j + hit
            self.seg = np.where(hit, 0, self.seg)
            if idx + 1 < self.k:
                self._mons[idx + 1].reset(hit)
                self._mons[idx + 1].feed(s, hit)
            else:
                self.reach_state[hit] = s[hit]

    def observe(self, s, mask=None) -> None:
        s = np.asarray(s, dtype=float)
        if self.j is None:
            self._start(s)
            return
        live = ~self.done if mask is None else (~self.done & mask)
        for idx in range(self.k):
            rows = live & (self.j == idx)
            if rows.any():
                self._mons[idx].feed(s, rows)
        self.seg = self.seg + live
        self._check(s)

    def actions(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        a = np.zeros(s.shape[:-1] + (2,))
        for idx, e in enumerate(self.edges):
            rows = self.j == idx
            if rows.any():
                a[rows] = self.policies[e](s[rows])
        return a

    def __call__(self, s, mask=None) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            self.observe(s[None])
            return self.actions(s[None])[0]
        self.observe(s, mask)
        return self.actions(s)


@dataclass
class PathRollout:
    states: np.ndarray      # (T + 1, P, d); rows freeze once finished or failed
    lengths: np.ndarray     # last meaningful index per row
    success: np.ndarray     # all edges achieved
    reach_state: np.ndarray
    steps: int

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[: self.lengths[i] + 1, i])


def run_path(policy: PathPolicy, env, s0, horizon: int,
             edge_horizon: Optional[int] = None) -> PathRollout:
    """Batched closed-loop rollouts; each row stops when the path completes.

    With ``edge_horizon`` a row also stops (as a failure) when it spends that
    many steps on one edge without achieving it.
    """
    s = np.array(s0, dtype=float)
    P = len(s)
    policy.reset()
    a = policy(s)
    alive = np.ones(P, dtype=bool)
    lengths = np.zeros(P, dtype=int)
    states = [s.copy()]
    steps = 0
    for t in range(1, horizon + 1):
        active = alive & ~policy.done
        if not active.any():
            break
        s = np.where(active[:, None], env.step(s, a), s)
        steps += int(active.sum())
        lengths[active] = t
        states.append(s.copy())
        a = policy(s, active)
        if edge_horizon is not None:
            alive &= policy.done | (policy.seg < edge_horizon)
    return PathRollout(np.stack(states), lengths, policy.done.copy(),
                       policy.reach_state.copy(), steps)


# ---------------------------------------------------------------------------
# Start-state distributions


class EmpiricalSampler:
    """Uniform resampling (with replacement) from a buffer of states."""

    def __init__(self, states):
        self.states = np.asarray(states, dtype=float)
        if len(self.states) == 0:
            raise ValueError("empty state buffer")

    def __call__(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        if n is None:
            return self.states[rng.integers(len(self.states))].copy()
        return self.states[rng.integers(len(self.states), size=n)]


def reach_distribution(G: AbstractGraph, path: Sequence[int], policies: dict, env,
                       rng: np.random.Generator, horizon: int, buffer_size: int = 500,
                       buffer_min: int = 50, rollout_cap: int = 20,
                       counter: Optional[StepCounter] = None) -> Callable:
    """Sampler over states at which the path policy completes ``path``.

    Each edge gets ``horizon`` steps. Rollouts run in batches of
    ``buffer_size`` until that many successes are collected or
    ``rollout_cap * buffer_size`` rollouts have been used.
    """
    if len(path) == 1:
        return env.reset
    pol = PathPolicy(G, path, policies)
    k = len(path) - 1
    found, used = [], 0
    while sum(len(f) for f in found) < buffer_size and used < rollout_cap * buffer_size:
        out = run_path(pol, env, env.reset(rng, buffer_size), horizon * k, edge_horizon=horizon)
        used += buffer_size
        if counter is not None:
            counter.add(out.steps, "reach")
        found.append(out.reach_state[out.success])
    buf = np.concatenate(found)[:buffer_size]
    if len(buf) < buffer_min:
        raise EdgeStarvation((path[-2], path[-1]), len(buf), used)
    return EmpiricalSampler(buf)


# ---------------------------------------------------------------------------
# Edge learning backends


def estimate_edge_prob(e, policy, eta: Callable, env, G: AbstractGraph, M: int,
                       rng: np.random.Generator, horizon: int = 20,
                       counter: Optional[StepCounter] = None) -> float:
    """Fraction of ``M`` rollouts from ``eta`` that achieve ``e``, clamped to ``[1/(2M), 1]``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    out = run_edge_episodes(env, G, e, policy, eta(rng, M), horizon, shaped=False)
    if counter is not None:
        counter.add(out.steps, "estimate")
    return clamp_prob(out.achieved.mean(), M)


class ArsBackend:
    """Trains edges with ARS and estimates their probabilities by simulation."""

    def __init__(self, env, cfg: DirlConfig):
        self.env = env
        self.cfg = cfg

    def initial(self) -> Callable:
        return self.env.reset

    def train(self, e, G, eta, rng, counter: StepCounter) -> EdgePolicy:
        pol = learn_edge_policy(e, G, self.env, eta, self.cfg.ars, rng)
        counter.add(pol.info["steps"], "train")
        return pol

    def estimate(self, e, G, policy, eta, rng, counter: StepCounter) -> float:
        return estimate_edge_prob(e, policy, eta, self.env, G, self.cfg.n_estimate, rng,
                                  self.cfg.ars.horizon, counter)

    def reach(self, G, path, policies, rng, counter: StepCounter) -> Callable:
        c = self.cfg
        return reach_distribution(G, path, policies, self.env, rng, c.ars.horizon,
                                  c.buffer_size, c.buffer_min, c.rollout_cap, counter)


class FixedProbBackend:
    """Stand-in learner: every edge gets a preset probability, no simulation."""

    def __init__(self, probs: dict, n_estimate: int = 200):
        self.probs = dict(probs)
        self.n_estimate = n_estimate

    def initial(self) -> Callable:
        return lambda rng, n=None: np.zeros((2,) if n is None else (n, 2))

    def train(self, e, G, eta, rng, counter):
        return ("fixed", e)

    def estimate(self, e, G, policy, eta, rng, counter) -> float:
        return clamp_prob(self.probs[e], self.n_estimate)

    def reach(self, G, path, policies, rng, counter) -> Callable:
        return self.initial()


# ---------------------------------------------------------------------------
# Search


@dataclass(frozen=True)
class CandidatePath:
    vertices: tuple
    probs: tuple = ()

    @property
    def cost(self) -> float:
        return path_cost(self.probs)

    def key(self):
        return (self.cost, len(self.vertices), self.vertices)

    def extend(self, v: int, p: float) -> "CandidatePath":
        return CandidatePath(self.vertices + (v,), self.probs + (p,))


@dataclass
class DirlState:
    processed: set = field(default_factory=set)
    gamma: dict = field(default_factory=dict)       # vertex -> [CandidatePath]
    policies: dict = field(default_factory=dict)    # edge -> policy
    probs: dict = field(default_factory=dict)       # edge -> p_hat
    samplers: dict = field(default_factory=dict)    # vertex -> eta_u
    order: list = field(default_factory=list)       # processing order
    starved: dict = field(default_factory=dict)     # vertex -> message
    counter: StepCounter = field(default_factory=StepCounter)


def shortest_path(gamma_u: Sequence[CandidatePath]) -> CandidatePath:
    if not gamma_u:
        raise ValueError("no candidate paths")
    return min(gamma_u, key=CandidatePath.key)


def nearest_vertex(state: DirlState, G: AbstractGraph) -> int:
    best = None
    for u in range(G.n_vertices):
        if u in state.processed or not state.gamma.get(u):
            continue
        c = shortest_path(state.gamma[u]).cost
        if best is None or c < best[0]:
            best = (c, u)
    if best is None:
        raise PlannerFailure("final regions unreachable with trained policies")
    return best[1]


def _edge_rng(seed: int, e, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, e[0], e[1], purpose])


@dataclass
class DirlResult:
    policy: PathPolicy
    path: CandidatePath
    state: DirlState

    @property
    def cost(self) -> float:
        return self.path.cost

    @property
    def certificate(self) -> float:
        return math.exp(-self.cost)

    def report(self) -> dict:
        s = self.state
        return {
            "path": list(self.path.vertices),
            "path_probs": list(self.path.probs),
            "cost": self.cost,
            "certificate": self.certificate,
            "total_steps": s.counter.steps,
            "steps_by_kind": dict(s.counter.by_kind),
            "edge_probs": {f"{u}->{v}": p for (u, v), p in sorted(s.probs.items())},
            "processed": list(s.order),
            "trained_edges": len(s.policies),
            "starved": {str(u): m for u, m in s.starved.items()},
        }


def run_dirl(G: AbstractGraph, env=None, cfg: DirlConfig = DirlConfig(), backend=None) -> DirlResult:
    """Interleave lazy Dijkstra with per-edge learning until a final vertex is popped."""
    if backend is None:
        backend = ArsBackend(env, cfg)
    st = DirlState()
    st.gamma[G.initial] = [CandidatePath((G.initial,))]
    while True:
        u = nearest_vertex(st, G)
        rho = shortest_path(st.gamma[u])
        if u in G.finals:
            return DirlResult(PathPolicy(G, rho.vertices, st.policies), rho, st)
        st.processed.add(u)
        st.order.append(u)
        try:
            if u == G.initial:
                eta = backend.initial()
            else:
                eta = backend.reach(G, rho.vertices, st.policies,
                                    _edge_rng(cfg.seed, (rho.vertices[-2], u), 2), st.counter)
        except EdgeStarvation as exc:
            st.starved[u] = str(exc)
            continue
        st.samplers[u] = eta
        for e in G.out_edges(u):
            pol = backend.train(e, G, eta, _edge_rng(cfg.seed, e, 0), st.counter)
            p = backend.estimate(e, G, pol, eta, _edge_rng(cfg.seed, e, 1), st.counter)
            st.policies[e] = pol
            st.probs[e] = p
            st.gamma.setdefault(e[1], []).append(rho.extend(e[1], p))


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_policy(policy: PathPolicy, G: AbstractGraph, env, M: int,
                    rng: np.random.Generator, horizon: int = 20) -> tuple[float, float]:
    """Monte Carlo probability that rollouts satisfy ``G``, with its binomial SE.

    Rollouts last ``horizon * (len(path) + 2)`` steps, or stop once the path
    completes; satisfaction is decided on the recorded prefix.
    """
    out = run_path(policy, env, env.reset(rng, M), horizon * (policy.k + 2))
    sat = np.array([satisfies_graph(out.trajectory(i), G) for i in range(M)])
    p = float(sat.mean())
    return p, math.sqrt(p * (1 - p) / M)


def certificate_check(p_sat: float, se_sat: float, path_probs: Sequence[float], M: int) -> dict:
    """Compare evaluated success with the lower bound ``exp(-cost)`` given estimation noise.

    The bound's SE comes from the delta method over the per-edge binomial
    estimates: ``cert * sqrt(sum (1 - p) / (M p))``.
    """
    cert = math.exp(-path_cost(path_probs))
    se_cert = cert * math.sqrt(sum((1 - p) / (M * p) for p in path_probs))
    se = math.sqrt(se_sat ** 2 + se_cert ** 2)
    return {
        "success_prob": p_sat,
        "certificate": cert,
        "combined_se": se,
        "margin": p_sat - (cert - 3 * se),
        "holds": bool(p_sat >= cert - 3 * se),
    }
