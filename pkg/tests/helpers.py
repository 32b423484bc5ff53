"""Independent oracles and generators shared by the test modules.

Everything here is written from the definitions directly (plain loops, no
memoisation, exhaustive enumeration) so it can check the package code.
"""

import itertools

import numpy as np

from dirl.graph import Always, Concat
from dirl.spec_lang import Achieve, And, Choice, Ensuring, Or, Seq, eval_bool, rooms_atoms

ATOMS = rooms_atoms()
# the 3x3 discretised state sample: room centres of a 3x3 grid
GRID_STATES = np.array([[c + 0.5, r + 0.5] for r in range(3) for c in range(3)])


def random_pred(rng, depth=2):
    if depth <= 0 or rng.random() < 0.5:
        name = "reach" if rng.random() < 0.6 else "avoid"
        return ATOMS[name](int(rng.integers(3)), int(rng.integers(3)))
    op = And if rng.random() < 0.5 else Or
    return op(random_pred(rng, depth - 1), random_pred(rng, depth - 1))


def random_spec(rng, depth=4):
    if depth <= 1 or rng.random() < 0.25:
        return Achieve(random_pred(rng, 1))
    kind = rng.integers(3)
    if kind == 0:
        return Ensuring(random_spec(rng, depth - 1), random_pred(rng, 1))
    if kind == 1:
        return Seq(random_spec(rng, depth - 1), random_spec(rng, depth - 1))
    return Choice(random_spec(rng, depth - 1), random_spec(rng, depth - 1))


def random_grid_trajectory(rng, max_len=12):
    n = int(rng.integers(1, max_len + 1))
    return GRID_STATES[rng.integers(len(GRID_STATES), size=n)]


def holds(b, s) -> bool:
    return bool(eval_bool(b, s))


def naive_satisfies(states, phi) -> bool:
    """The satisfaction clauses, read literally, on the whole finite trajectory."""
    t = len(states) - 1
    if isinstance(phi, Achieve):
        return any(holds(phi.pred, states[i]) for i in range(t + 1))
    if isinstance(phi, Ensuring):
        return naive_satisfies(states, phi.spec) and all(holds(phi.pred, s) for s in states)
    if isinstance(phi, Seq):
        return any(naive_satisfies(states[: i + 1], phi.first)
                   and naive_satisfies(states[i + 1:], phi.second) for i in range(t))
    return naive_satisfies(states, phi.left) or naive_satisfies(states, phi.right)


def brute_member(z, states) -> bool:
    """Safe-set membership by direct split search."""
    if isinstance(z, Always):
        return all(holds(z.pred, s) for s in states)
    assert isinstance(z, Concat)
    n = len(states)
    return any(all(holds(z.first, s) for s in states[: k + 1])
               and all(holds(z.second, s) for s in states[k + 1:])
               for k in range(n - 1))


def simple_paths(G, u):
    if u in G.finals:
        yield (u,)
    for _, v in G.out_edges(u):
        for rest in simple_paths(G, v):
            yield (u,) + rest


def brute_satisfies_graph(states, G) -> bool:
    """Enumerate every initial-to-final path and every index sequence for it."""
    t = len(states) - 1
    if not holds(G.beta[G.initial], states[0]):
        return False
    for path in simple_paths(G, G.initial):
        k = len(path) - 1
        # i_0 = 0 <= i_1 < i_2 < ... < i_k <= t
        for rest in itertools.combinations_with_replacement(range(t + 1), k):
            idx = (0,) + rest
            if any(idx[j + 1] <= idx[j] for j in range(1, k)):
                continue
            ok = True
            for j in range(k):
                e = (path[j], path[j + 1])
                lo, hi = idx[j], idx[j + 1]
                if j > 0 and hi == lo:
                    ok = False
                    break
                if not (brute_member(G.safe[e], states[lo: hi + 1])
                        and holds(G.beta[path[j + 1]], states[hi])):
                    ok = False
                    break
            if ok and brute_member(G.term_set(path[-1]), states[idx[-1]:]):
                return True
    return False


def brute_best_path(edges, probs, source, targets):
    """Exhaustive minimum-cost path search with the planner's tie rule."""
    out = {}
    for u, v in edges:
        out.setdefault(u, []).append(v)
    best = None

    def walk(path, cost):
        nonlocal best
        u = path[-1]
        if u in targets:
            key = (cost, len(path), path)
            if best is None or key < best:
                best = key
        for v in out.get(u, []):
            walk(path + (v,), cost - np.log(probs[(u, v)]))

    walk((source,), 0.0)
    return best
