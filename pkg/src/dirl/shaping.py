"""Shaped per-step rewards for learning a single edge policy.

``R_step(s, a, s') = R_reach + R_safe`` where ``R_reach`` is the quantitative
value of the target region at ``s'`` and ``R_safe`` is a non-positive
penalty derived from the edge's safe set. For two-phase safe sets a flag
``psi`` records whether the first-phase predicate has held on every state so
far; it is updated with the pre-transition state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import AbstractGraph, Always, SafeSet, achieves_edge
from .spec_lang import Predicate, eval_bool, eval_quant

__all__ = ["ShapingMonitor", "EdgeShaper", "step_reward", "sparse_reward"]


class EdgeShaper:
    """Vectorised shaped reward for one edge (target predicate + safe set)."""

    def __init__(self, target: Predicate, safe: SafeSet):
        self.target = target
        self.safe = safe

    @classmethod
    def for_edge(cls, G: AbstractGraph, e) -> "EdgeShaper":
        return cls(G.beta[e[1]], G.safe[e])

    def reward(self, psi, s, s_next):
        """Return ``(reward, psi')`` for a batch of transitions."""
        r = np.asarray(eval_quant(self.target, s_next), dtype=float)
        z = self.safe
        if isinstance(z, Always):
            return r + np.minimum(0.0, eval_quant(z.pred, s_next)), psi
        psi = np.logical_and(psi, eval_bool(z.first, s))
        q2 = np.asarray(eval_quant(z.second, s_next), dtype=float)
        q_either = np.maximum(eval_quant(z.first, s_next), q2)
        r_safe = np.where(psi, np.minimum(0.0, q_either), np.minimum(0.0, q2))
        return r + r_safe, psi


@dataclass(frozen=True)
class ShapingMonitor:
    target: Predicate
    safe: SafeSet
    psi: bool = True


def step_reward(mon: ShapingMonitor, s, a, s_next) -> tuple[float, ShapingMonitor]:
    """Shaped reward of one transition and the monitor after it. ``a`` is unused."""
    r, psi = EdgeShaper(mon.target, mon.safe).reward(mon.psi, s, s_next)
    return float(r), replace(mon, psi=bool(psi))


def sparse_reward(zeta, e, G: AbstractGraph) -> int:
    """1 if ``zeta`` achieves edge ``e``, else 0."""
    return int(achieves_edge(zeta, e, G) is not None)
