"""Augmented Random Search (V2-t) for single-edge policies.

Policies are small tanh MLPs over normalised states. Each iteration samples
``N`` Gaussian directions, scores ``theta +/- nu * delta`` with one shaped
episode each, keeps the ``b`` best directions and steps along the weighted
sum of their return differences, scaled by the std of the returns used.
All ``2N`` episodes of an iteration run as one vectorised batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .graph import AbstractGraph, SafeMonitor
from .shaping import EdgeShaper
from .spec_lang import eval_bool

__all__ = [
    "ArsConfig", "ArsConfigError", "MLPArch", "ObsNormalizer", "EdgePolicy",
    "act", "ars_update", "learn_edge_policy", "run_edge_episodes",
    "save_checkpoint", "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class ArsConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArsConfig:
    step_size: float = 0.05    # see ledger: 0.3 stalls the tanh policy at zero speed
    noise: float = 0.05
    n_directions: int = 30
    n_top: int = 15
    episodes: int = 24000     # per-edge budget k
    horizon: int = 20         # episode length m
    hidden: int = 30
    bonus: float = 10.0       # paid once, when the edge is first achieved
    stop_on_success: bool = False  # see ledger: early stop rewards unsafe shortcuts

    def __post_init__(self):
        if not 1 <= self.n_top <= self.n_directions:
            raise ArsConfigError("need 1 <= n_top <= n_directions")
        if self.step_size <= 0 or self.noise <= 0:
            raise ArsConfigError("step size and noise must be positive")
        if self.horizon < 1:
            raise ArsConfigError("horizon must be at least 1")

    @property
    def iterations(self) -> int:
        return self.episodes // (2 * self.n_directions)


@dataclass(frozen=True)
class MLPArch:
    """``in -> hidden -> hidden -> out`` with tanh units; outputs squashed to action bounds."""

    in_dim: int = 2
    hidden: int = 30
    out_dim: int = 2
    max_speed: float = 0.25

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        h = self.hidden
        return [(h, self.in_dim), (h,), (h, h), (h,), (self.out_dim, h), (self.out_dim,)]

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))

    def unpack(self, params: np.ndarray) -> list[np.ndarray]:
        lead = params.shape[:-1]
        out, k = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(params[..., k:k + size].reshape(lead + shape))
            k += size
        return out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Scaled Gaussian hidden weights, zero output layer (so the initial action is mid-range)."""
        parts = []
        for i, shape in enumerate(self.shapes):
            if len(shape) == 2 and i < 4:
                parts.append(rng.standard_normal(shape).ravel() / np.sqrt(shape[1]))
            else:
                parts.append(np.zeros(int(np.prod(shape))))
        return np.concatenate(parts)

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Raw tanh outputs. ``params`` is ``(D,)`` or ``(P, D)`` matching ``x``'s batch."""
        W1, b1, W2, b2, W3, b3 = self.unpack(params)
        h = np.tanh(np.einsum("...ij,...j->...i", W1, x) + b1)
        h = np.tanh(np.einsum("...ij,...j->...i", W2, h) + b2)
        return np.tanh(np.einsum("...ij,...j->...i", W3, h) + b3)

    def to_action(self, y: np.ndarray) -> np.ndarray:
        v = 0.5 * (y[..., 0] + 1.0) * self.max_speed
        th = np.pi * y[..., 1]
        return np.stack([v, th], axis=-1)


@dataclass
class ObsNormalizer:
    """Running mean/variance of observations (parallel-merge update)."""

    dim: int = 2
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    def update(self, batch) -> None:
        batch = np.asarray(batch, dtype=float).reshape(-1, self.dim)
        n = len(batch)
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + b_m2 + delta ** 2 * self.count * n / total
        self.count = total

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.sqrt(self.var), 1e-8)

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.count == 0:
            return x
        return (x - self.mean) / self.std

    def copy(self) -> "ObsNormalizer":
        return ObsNormalizer(self.dim, self.count, self.mean.copy(), self.m2.copy())


def act(params: np.ndarray, norm: ObsNormalizer, s, arch: MLPArch = MLPArch()) -> np.ndarray:
    """Action ``(speed, heading)`` for state(s) ``s``."""
    return arch.to_action(arch.forward(params, norm.normalize(s)))


@dataclass
class EdgePolicy:
    """A trained edge policy: frozen parameters plus the normaliser snapshot."""

    arch: MLPArch
    params: np.ndarray
    norm: ObsNormalizer
    info: dict = field(default_factory=dict)

    def __call__(self, s) -> np.ndarray:
        return act(self.params, self.norm, s, self.arch)


def ars_update(theta, deltas, r_plus, r_minus, step_size: float, n_top: int) -> np.ndarray:
    """One V2-t parameter step from antithetic returns."""
    r_plus = np.asarray(r_plus, dtype=float)
    r_minus = np.asarray(r_minus, dtype=float)
    score = np.maximum(r_plus, r_minus)
    top = np.argsort(-score, kind="stable")[:n_top]
    sigma = max(float(np.std(np.concatenate([r_plus[top], r_minus[top]]))), 1e-8)
    grad = (r_plus[top] - r_minus[top]) @ np.asarray(deltas)[top]
    return theta + step_size / (n_top * sigma) * grad


# ---------------------------------------------------------------------------
# Episodes


@dataclass
class EpisodeBatch:
    returns: np.ndarray
    achieved: np.ndarray
    steps: int
    visited: np.ndarray


def run_edge_episodes(env, G: AbstractGraph, e, policy: Callable, s0: np.ndarray,
                      horizon: int, bonus: float = 0.0, shaped: bool = True,
                      record: bool = False, stop_on_success: bool = True) -> EpisodeBatch:
    """Run one episode per row of ``s0`` on edge ``e``; stop each on achievement.

    ``policy`` maps a ``(P, 2)`` state batch to actions. Returns shaped
    returns (plus ``bonus`` on achievement) and the sparse success flags.
    """
    s = np.array(s0, dtype=float)
    P = len(s)
    u, v = e
    target = G.beta[v]
    shaper = EdgeShaper.for_edge(G, e)
    mon = SafeMonitor(G.safe[e], (P,))
    member = mon.feed(s)
    achieved = member & eval_bool(target, s) if u == G.initial else np.zeros(P, dtype=bool)
    achieved = np.asarray(achieved, dtype=bool)
    active = ~achieved if stop_on_success else np.ones(P, dtype=bool)
    returns = bonus * achieved.astype(float)
    psi = np.ones(P, dtype=bool)
    steps = 0
    visited = [s.copy()] if record else []
    for _ in range(horizon):
        if not active.any():
            break
        s_next = env.step(s, policy(s))
        if shaped:
            r, psi = shaper.reward(psi, s, s_next)
            returns += np.where(active, r, 0.0)
        hit = active & ~achieved & mon.feed(s_next) & eval_bool(target, s_next)
        returns += bonus * hit
        steps += int(active.sum())
        if record:
            visited.append(s_next[active])
        achieved |= hit
        if stop_on_success:
            active &= ~hit
        s = s_next
    vis = np.concatenate(visited) if record else np.empty((0, 2))
    return EpisodeBatch(returns, achieved, steps, vis)


def learn_edge_policy(e, G: AbstractGraph, env, eta: Callable, cfg: ArsConfig,
                      rng: np.random.Generator) -> EdgePolicy:
    """Train a policy for edge ``e`` with ARS from initial states drawn by ``eta(rng, n)``.

    The returned policy's ``info`` records ``steps`` (environment steps used)
    and ``history`` (mean return per iteration).
    """
    if cfg.iterations < 1:
        raise ArsConfigError(
            f"episode budget {cfg.episodes} is below one iteration (2 * {cfg.n_directions})")
    arch = MLPArch(env.state_dim, cfg.hidden, env.action_dim, env.max_speed)
    base = int(rng.integers(2**63))
    theta = arch.init_params(np.random.default_rng([base, 0]))
    norm = ObsNormalizer(env.state_dim)
    N = cfg.n_directions
    steps = 0
    history = []
    for it in range(cfg.iterations):
        sub = np.random.default_rng([base, 1, it])
        deltas = sub.standard_normal((N, arch.n_params))
        params = np.concatenate([theta + cfg.noise * deltas, theta - cfg.noise * deltas])
        starts = eta(sub, N)
        s0 = np.concatenate([starts, starts])  # common start per antithetic pair
        frozen = norm.copy()
        batch = run_edge_episodes(
            env, G, e, lambda s: act(params, frozen, s, arch), s0,
            cfg.horizon, cfg.bonus, shaped=True, record=True,
            stop_on_success=cfg.stop_on_success)
        steps += batch.steps
        theta = ars_update(theta, deltas, batch.returns[:N], batch.returns[N:],
                           cfg.step_size, cfg.n_top)
        norm.update(batch.visited)
        history.append(float(batch.returns.mean()))
    return EdgePolicy(arch, theta, norm, {"steps": steps, "history": history})


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(policy: EdgePolicy, path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    np.savez(
        path,
        version=np.array(CHECKPOINT_VERSION),
        arch=np.array(json.dumps(asdict(policy.arch))),
        params=policy.params,
        norm_count=np.array(policy.norm.count),
        norm_mean=policy.norm.mean,
        norm_m2=policy.norm.m2,
    )
    return path


def load_checkpoint(path) -> EdgePolicy:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = MLPArch(**json.loads(str(data["arch"])))
        norm = ObsNormalizer(arch.in_dim, int(data["norm_count"]),
                             data["norm_mean"].copy(), data["norm_m2"].copy())
        return EdgePolicy(arch, data["params"].copy(), norm)
