import math

import numpy as np
import pytest

from dirl.ars import ArsConfig
from dirl.graph import AbstractGraph, Always, compile_spec, satisfies_graph
from dirl.harness import preset_spec_text
from dirl.planner import (CandidatePath, DirlConfig, DirlState, EdgeStarvation,
                          EmpiricalSampler, FixedProbBackend, PathPolicy, PlannerFailure,
                          certificate_check, clamp_prob, estimate_edge_prob, evaluate_policy,
                          nearest_vertex, path_cost, reach_distribution, run_dirl, run_path,
                          shortest_path)
from dirl.rooms import RoomsEnv, RoomsLayout, preset_layout, waypoint_policy
from dirl.spec_lang import TRUE, eval_bool, parse_spec

from helpers import brute_best_path

EX_GRAPH = compile_spec(parse_spec(preset_spec_text("rooms9_ex")))


def batched(f):
    return lambda S: np.array([f(s) for s in np.atleast_2d(S)])


def still(S):
    return np.zeros((len(S), 2))


def test_path_cost_and_clamp():
    assert path_cost([]) == 0.0
    assert path_cost([1.0]) == 0.0
    assert path_cost([0.9, 0.8]) == pytest.approx(-math.log(0.72))
    with pytest.raises(ValueError):
        path_cost([0.0])
    with pytest.raises(ValueError):
        path_cost([1.5])
    assert clamp_prob(0.0, 200) == 0.0025
    assert clamp_prob(0.5, 200) == 0.5
    assert clamp_prob(1.0, 200) == 1.0


def test_estimate_edge_prob_extremes_and_bernoulli():
    env = RoomsEnv(preset_layout("rooms9"))
    G = compile_spec(parse_spec("achieve reach(0,1)"))
    rng = np.random.default_rng(0)
    assert estimate_edge_prob((0, 1), still, env.reset, env, G, 200, rng) == 0.0025
    right = lambda S: np.tile([0.25, 0.0], (len(S), 1))
    assert estimate_edge_prob((0, 1), right, env.reset, env, G, 200, rng) == 1.0

    # starts inside the target with probability q; standing still decides the edge at index 0
    q = 0.3
    def eta(rng, n):
        inside = rng.random(n) < q
        return np.where(inside[:, None], [1.5, 0.5], [0.5, 0.5])
    p = estimate_edge_prob((0, 1), still, eta, env, G, 4000, rng)
    assert abs(p - q) < 0.03


def test_candidate_ties_and_nearest_vertex():
    a = CandidatePath((0, 2, 5), (0.5, 1.0))
    b = CandidatePath((0, 5), (0.5,))
    c = CandidatePath((0, 1, 5), (1.0, 0.5))
    assert shortest_path([a, c, b]) == b          # fewer edges first
    assert shortest_path([a, c]) == c             # then lexicographic
    with pytest.raises(ValueError):
        shortest_path([])
    G = AbstractGraph(4, ((0, 1), (0, 2), (1, 3), (2, 3)), 0, frozenset({3}),
                      (TRUE,) * 4, {e: Always(TRUE) for e in ((0, 1), (0, 2), (1, 3), (2, 3))})
    st = DirlState(processed={0})
    st.gamma = {0: [CandidatePath((0,))], 1: [CandidatePath((0, 1), (0.5,))],
                2: [CandidatePath((0, 2), (0.5,))]}
    assert nearest_vertex(st, G) == 1
    st.processed |= {1, 2}
    with pytest.raises(PlannerFailure):
        nearest_vertex(st, G)


def test_example_graph_with_synthetic_probabilities():
    probs = {(0, 1): 0.9, (0, 2): 0.9, (1, 3): 0.8, (2, 3): 0.001}
    res = run_dirl(EX_GRAPH, backend=FixedProbBackend(probs))
    assert res.path.vertices == (0, 1, 3)
    assert res.cost == pytest.approx(-math.log(0.72))
    assert res.certificate == pytest.approx(0.72)
    # the near-impossible edge is clamped to 1 / (2M)
    assert res.state.probs[(2, 3)] == 0.0025


def test_lazy_training_skips_edges_never_needed():
    probs = {(0, 1): 0.9, (0, 2): 0.5, (1, 3): 0.95, (2, 3): 1.0}
    res = run_dirl(EX_GRAPH, backend=FixedProbBackend(probs))
    assert res.path.vertices == (0, 1, 3)
    assert set(res.state.policies) == {(0, 1), (0, 2), (1, 3)}
    assert res.state.order == [0, 1]
    # every trained edge leaves a processed vertex
    assert all(u in res.state.processed for u, _ in res.state.policies)


def random_dag(rng, n):
    edges = sorted({(int(u), int(v)) for u, v in rng.integers(n, size=(3 * n, 2)) if u < v})
    finals = frozenset(int(v) for v in rng.choice(np.arange(1, n), size=int(rng.integers(1, 3))))
    G = AbstractGraph(n, tuple(edges), 0, finals, (TRUE,) * n, {e: Always(TRUE) for e in edges})
    probs = {e: float(rng.choice([rng.uniform(0.01, 1.0), 0.5, 1.0])) for e in edges}
    return G, probs


def test_planner_matches_exhaustive_search_on_random_dags():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        G, probs = random_dag(rng, int(rng.integers(2, 11)))
        best = brute_best_path(G.edges, probs, 0, G.finals)
        if best is None:
            with pytest.raises(PlannerFailure):
                run_dirl(G, backend=FixedProbBackend(probs))
            continue
        res = run_dirl(G, backend=FixedProbBackend(probs))
        assert res.cost == pytest.approx(best[0], abs=1e-12)
        checked += 1


class StarveVertex(FixedProbBackend):
    def __init__(self, probs, bad):
        super().__init__(probs)
        self.bad = bad

    def reach(self, G, path, policies, rng, counter):
        if path[-1] in self.bad:
            raise EdgeStarvation((path[-2], path[-1]), 3, 10000)
        return self.initial()


def test_starved_vertex_is_skipped():
    probs = {(0, 1): 0.9, (0, 2): 0.5, (1, 3): 0.95, (2, 3): 1.0}
    res = run_dirl(EX_GRAPH, backend=StarveVertex(probs, {1}))
    assert res.path.vertices == (0, 2, 3)
    assert 1 in res.state.starved and (1, 3) not in res.state.policies
    with pytest.raises(PlannerFailure):
        run_dirl(EX_GRAPH, backend=StarveVertex(probs, {1, 2}))


# -- path policies on the rooms environment ------------------------------------


def wp_setup():
    lay = preset_layout("rooms9")
    env = RoomsEnv(lay)
    G = compile_spec(parse_spec("(reach(0,2); reach(2,2)) ensuring avoid(1,0)", lay.atoms()))
    pols = {(0, 1): batched(waypoint_policy(lay, (0, 2))),
            (1, 2): batched(waypoint_policy(lay, (2, 2)))}
    return env, G, pols


def test_path_policy_successes_satisfy_the_graph():
    env, G, pols = wp_setup()
    pol = PathPolicy(G, (0, 1, 2), pols)
    out = run_path(pol, env, env.reset(np.random.default_rng(0), 64), 120)
    assert out.success.mean() > 0.9
    for i in range(64):
        zeta = out.trajectory(i)
        assert satisfies_graph(zeta, G) == bool(out.success[i])
        if out.success[i]:
            assert eval_bool(G.beta[2], out.reach_state[i])
            assert np.array_equal(zeta.states[-1], out.reach_state[i])


def test_path_policy_scalar_calls_match_batch():
    env, G, pols = wp_setup()
    s0 = env.reset(np.random.default_rng(1), 3)
    pol = PathPolicy(G, (0, 1, 2), pols)
    out = run_path(pol, env, s0, 120)
    single = PathPolicy(G, (0, 1, 2), pols)
    s = s0[0]
    for t in range(out.lengths[0]):
        s = env.step(s, single(s))
    assert np.allclose(s, out.states[out.lengths[0], 0])
    assert single.j[0] >= 1


def test_reach_buffer_states_are_in_the_target_region():
    env, G, pols = wp_setup()
    eta = reach_distribution(G, (0, 1), pols, env, np.random.default_rng(2), 40,
                             buffer_size=100, buffer_min=10)
    assert isinstance(eta, EmpiricalSampler) and len(eta.states) == 100
    assert np.all(eval_bool(G.beta[1], eta.states))
    assert eta(np.random.default_rng(0), 7).shape == (7, 2)
    assert reach_distribution(G, (0,), pols, env, np.random.default_rng(2), 40) == env.reset


def test_reach_buffer_starvation():
    env, G, _ = wp_setup()
    with pytest.raises(EdgeStarvation) as info:
        reach_distribution(G, (0, 1), {(0, 1): still}, env, np.random.default_rng(0), 20,
                           buffer_size=20, buffer_min=5, rollout_cap=3)
    assert info.value.rollouts == 60 and info.value.successes == 0


def test_zero_policy_evaluates_to_zero():
    env = RoomsEnv(preset_layout("rooms9"))
    pol = PathPolicy(EX_GRAPH, (0, 1, 3), {e: still for e in ((0, 1), (1, 3))})
    p, se = evaluate_policy(pol, EX_GRAPH, env, 100, np.random.default_rng(0))
    assert (p, se) == (0.0, 0.0)


def test_waypoint_path_evaluates_high():
    env, G, pols = wp_setup()
    pol = PathPolicy(G, (0, 1, 2), pols)
    p, se = evaluate_policy(pol, G, env, 200, np.random.default_rng(0), horizon=40)
    assert p > 0.9 and se < 0.03


def test_certificate_check():
    ok = certificate_check(0.9, 0.01, [0.95, 0.95], 200)
    assert ok["holds"] and ok["certificate"] == pytest.approx(0.9025)
    se_cert = 0.9025 * math.sqrt(2 * 0.05 / (200 * 0.95))
    assert ok["combined_se"] == pytest.approx(math.sqrt(0.01 ** 2 + se_cert ** 2))
    assert not certificate_check(0.5, 0.01, [0.95, 0.95], 200)["holds"]


# -- end-to-end with the learning backend -----------------------------------------


def test_step_accounting_identity():
    lay = RoomsLayout(1, 3, doors=[((0, 0), (0, 1)), ((0, 1), (0, 2))])
    env = RoomsEnv(lay)
    G = compile_spec(parse_spec("reach(0,1); reach(0,2)", lay.atoms()))
    cfg = DirlConfig(ArsConfig(episodes=1200, n_directions=10, n_top=5, hidden=8),
                     n_estimate=50, buffer_size=50, buffer_min=5, seed=1)
    res = run_dirl(G, env, cfg)
    c = res.state.counter
    assert c.steps == sum(c.by_kind.values())
    assert c.by_kind["train"] == sum(p.info["steps"] for p in res.state.policies.values())
    assert c.by_kind["estimate"] > 0
    rep = res.report()
    assert rep["total_steps"] == c.steps and rep["trained_edges"] == len(res.state.policies)
    # a rerun with the same seed is identical
    again = run_dirl(G, env, cfg)
    assert again.report() == rep
