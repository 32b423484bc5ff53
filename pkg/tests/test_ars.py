import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirl.ars import (ArsConfig, ArsConfigError, EdgePolicy, MLPArch, ObsNormalizer, act,
                      ars_update, learn_edge_policy, load_checkpoint, run_edge_episodes,
                      save_checkpoint)
from dirl.graph import compile_spec
from dirl.rooms import RoomsEnv, RoomsLayout, preset_layout
from dirl.spec_lang import parse_spec


def test_normalizer_matches_batch_statistics():
    rng = np.random.default_rng(0)
    data = rng.normal([1.0, -2.0], [0.5, 3.0], size=(1000, 2))
    norm = ObsNormalizer(2)
    for chunk in np.array_split(data, [1, 7, 100, 333, 900]):
        norm.update(chunk)
    assert norm.count == 1000
    assert np.allclose(norm.mean, data.mean(0), atol=1e-10)
    assert np.allclose(norm.var, data.var(0), atol=1e-10)


def test_empty_normalizer_is_identity():
    norm = ObsNormalizer(2)
    x = np.array([[0.3, 2.0]])
    assert np.array_equal(norm.normalize(x), x)
    norm.update(np.ones((5, 2)))  # zero variance is floored, not divided by
    assert np.all(np.isfinite(norm.normalize(x)))


def test_zero_params_give_mid_speed_straight_heading():
    arch = MLPArch()
    a = act(np.zeros(arch.n_params), ObsNormalizer(2), [[0.5, 0.5], [2.0, 1.0]], arch)
    assert np.allclose(a, [[0.125, 0.0], [0.125, 0.0]])


def test_init_params_shapes_and_zero_output():
    arch = MLPArch(2, 8, 2, 0.25)
    p = arch.init_params(np.random.default_rng(0))
    assert p.shape == (arch.n_params,) == (8 * 2 + 8 + 64 + 8 + 16 + 2,)
    W3, b3 = arch.unpack(p)[4:]
    assert not W3.any() and not b3.any()


def test_batched_forward_matches_per_row():
    arch = MLPArch(2, 6, 2, 0.25)
    rng = np.random.default_rng(1)
    P = rng.standard_normal((5, arch.n_params))
    x = rng.standard_normal((5, 2))
    batched = arch.forward(P, x)
    for i in range(5):
        assert np.allclose(batched[i], arch.forward(P[i], x[i]))


def naive_update(theta, deltas, rp, rm, alpha, b):
    order = sorted(range(len(rp)), key=lambda i: -max(rp[i], rm[i]))[:b]
    used = [rp[i] for i in order] + [rm[i] for i in order]
    sigma = max(np.std(used), 1e-8)
    step = np.zeros_like(theta)
    for i in order:
        step += (rp[i] - rm[i]) * deltas[i]
    return theta + alpha / (b * sigma) * step


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_ars_update_matches_naive_loop(seed, b):
    rng = np.random.default_rng(seed)
    N, D = 8, 5
    theta = rng.standard_normal(D)
    deltas = rng.standard_normal((N, D))
    rp, rm = rng.standard_normal(N), rng.standard_normal(N)
    assert np.allclose(ars_update(theta, deltas, rp, rm, 0.1, b),
                       naive_update(theta, deltas, rp, rm, 0.1, b))


def test_ars_update_invariant_to_return_shift_and_scale():
    rng = np.random.default_rng(2)
    theta, deltas = rng.standard_normal(4), rng.standard_normal((6, 4))
    rp, rm = rng.standard_normal(6), rng.standard_normal(6)
    base = ars_update(theta, deltas, rp, rm, 0.05, 3)
    assert np.allclose(base, ars_update(theta, deltas, 7 * rp + 3, 7 * rm + 3, 0.05, 3))


def test_ars_update_equal_returns_is_a_no_op():
    theta = np.ones(3)
    out = ars_update(theta, np.eye(3), np.ones(3), np.ones(3), 0.1, 2)
    assert np.array_equal(out, theta)


def test_config_errors():
    with pytest.raises(ArsConfigError):
        ArsConfig(n_directions=4, n_top=5)
    with pytest.raises(ArsConfigError):
        ArsConfig(step_size=0)
    with pytest.raises(ArsConfigError):
        ArsConfig(horizon=0)
    env = RoomsEnv(preset_layout("rooms9"))
    G = compile_spec(parse_spec("achieve reach(0,1)"))
    with pytest.raises(ArsConfigError):
        learn_edge_policy((0, 1), G, env, env.reset, ArsConfig(episodes=10), np.random.default_rng(0))


def test_edge_episodes_pay_bonus_once_and_count_steps():
    env = RoomsEnv(preset_layout("rooms9"))
    G = compile_spec(parse_spec("achieve reach(0,1)"))
    right = lambda s: np.tile([0.25, 0.0], (len(s), 1))
    s0 = np.array([[0.5, 0.5], [0.5, 0.5]])
    out = run_edge_episodes(env, G, (0, 1), right, s0, 10, bonus=100.0, shaped=False,
                            stop_on_success=False)
    assert out.achieved.all() and np.allclose(out.returns, 100.0)
    assert out.steps == 20
    stop = run_edge_episodes(env, G, (0, 1), right, s0, 10, shaped=False)
    assert stop.achieved.all() and stop.steps == 2 * 3  # x: 0.5 -> 0.75 -> 1.0 -> 1.25


def test_trivial_edge_is_achieved_at_index_zero():
    env = RoomsEnv(preset_layout("rooms9"))
    G = compile_spec(parse_spec("achieve reach(0,0)"))
    still = lambda s: np.zeros((len(s), 2))
    out = run_edge_episodes(env, G, (0, 1), still, env.reset(np.random.default_rng(0), 50), 5)
    assert out.achieved.all() and out.steps == 0


def small_setup():
    lay = RoomsLayout(1, 2, doors=[((0, 0), (0, 1))])
    env = RoomsEnv(lay)
    G = compile_spec(parse_spec("achieve reach(0,1)", lay.atoms()))
    return env, G, ArsConfig(episodes=600, n_directions=10, n_top=5, hidden=8)


def test_learning_is_deterministic_and_checkpoint_round_trips(tmp_path):
    env, G, cfg = small_setup()
    a = learn_edge_policy((0, 1), G, env, env.reset, cfg, np.random.default_rng(3))
    b = learn_edge_policy((0, 1), G, env, env.reset, cfg, np.random.default_rng(3))
    assert np.array_equal(a.params, b.params)
    assert a.info["steps"] == b.info["steps"] == 30 * 2 * 10 * cfg.horizon
    assert len(a.info["history"]) == cfg.iterations == 30
    path = save_checkpoint(a, tmp_path / "edge")
    c = load_checkpoint(path)
    assert isinstance(c, EdgePolicy) and c.arch == a.arch
    assert np.array_equal(c.params, a.params)
    assert np.array_equal(c.norm.mean, a.norm.mean) and np.array_equal(c.norm.m2, a.norm.m2)
    s = env.reset(np.random.default_rng(0), 20)
    assert np.array_equal(c(s), a(s))


def test_different_seeds_differ():
    env, G, cfg = small_setup()
    a = learn_edge_policy((0, 1), G, env, env.reset, cfg, np.random.default_rng(3))
    b = learn_edge_policy((0, 1), G, env, env.reset, cfg, np.random.default_rng(4))
    assert not np.array_equal(a.params, b.params)
