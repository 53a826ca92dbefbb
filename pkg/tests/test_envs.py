import numpy as np
import pytest

from valuedecomp.envs import (
    EnvUsageError,
    GapWalker,
    LineLander,
    component_spec,
    env_config_fields,
    make_env,
    rollout,
)


# ---------------------------------------------------------------- scalar references


def replay_actions(acts):
    it = iter(acts)
    return lambda obs: next(it)

# independent re-implementations returning one scalar reward per step


def lander_reference(h0, actions, H=20, trace=False):
    h, v, ground, k, at_rest, rest = h0, 0.0, False, 0, False, 0
    out = []
    for u in actions:
        u = float(np.clip(u, -1, 1))
        r = 0.0
        if ground:
            k += 1
            if k == H:
                out.append(100.0)
                return out, True
            out.append(0.0)
            continue
        thrust = (u + 1.0)
        r -= 0.05 * thrust
        h2, v2 = h + 0.1 * v, v + (thrust - 1.0) * 0.1
        if h2 <= 0:
            if abs(v2) > 1.0:
                out.append(r - 100.0 - 0.1 * abs(v2))
                return out, True
            h, v, ground, k = 0.0, 0.0, True, 0
        else:
            h, v = h2, v2
        r -= 0.1 * abs(v)
        out.append(r)
    return out, False


def walker_reference(x0, actions):
    x, v = x0, 0.0
    out = []
    for u in actions:
        u = float(np.clip(u, -1, 1))
        x2 = x + 0.1 * v
        v2 = v + (2.0 * u - 0.5 * v) * 0.1
        r = (x2 - x) - 0.01 * u * u
        x, v = x2, v2
        if x < -1.0 or (2.5 <= x < 3.5 and v < 1.2):
            out.append(r - 100.0)
            return out, True
        out.append(r)
    return out, False


@pytest.mark.parametrize("seed", range(20))
def test_lander_composite_matches_reference(seed):
    rng = np.random.default_rng(seed)
    env = LineLander()
    env.reset(seed)
    h0 = env.h
    acts = np.clip(rng.normal(-0.3, 0.5, size=400), -1, 1)
    ep = rollout(env, replay_actions(acts), seed)
    ref, term = lander_reference(h0, acts)
    assert len(ref) == len(ep)
    assert np.allclose(ep.rewards.sum(axis=1), ref, atol=1e-12)
    assert ep.terminated == term


@pytest.mark.parametrize("seed", range(20))
def test_walker_composite_matches_reference(seed):
    rng = np.random.default_rng(seed)
    env = GapWalker()
    env.reset(seed)
    x0 = env.x
    acts = np.tanh(rng.normal(0.5, 1.0, size=200))
    ep = rollout(env, replay_actions(acts), seed)
    ref, term = walker_reference(x0, acts)
    assert len(ref) == len(ep)
    assert np.allclose(ep.rewards.sum(axis=1), ref, atol=1e-12)
    assert ep.terminated == term


def test_component_specs():
    spec = component_spec(LineLander())
    assert spec.component_names == ("landing", "crash", "main", "velocity")
    assert spec.n_components == 4
    assert spec.default_weights == (1.0,) * 4
    spec = GapWalker().component_spec()
    assert spec.component_names == ("forward", "control", "failure")
    assert spec.n_components == 3


def test_lander_reset():
    env = LineLander(include_v0_trace=True)
    obs = env.reset(3)
    assert obs[0] > 0 and obs[1] == 0 and obs[2] == 0
    assert np.array_equal(obs, env.reset(3))
    assert env.reset(4)[0] != obs[0]
    assert 5 <= obs[0] <= 10


def test_step_before_reset_and_after_end():
    env = GapWalker()
    with pytest.raises(EnvUsageError):
        env.step([0.0])
    env.reset(0)
    env.x = -0.99
    env.v = -1.0
    res = env.step([0.0])
    assert res.terminated
    with pytest.raises(EnvUsageError):
        env.step([0.0])


def test_bad_action_shape():
    env = LineLander()
    env.reset(0)
    with pytest.raises(EnvUsageError):
        env.step([0.0, 0.0])


def test_hover_step():
    env = LineLander()
    env.reset(0)
    env.v = -0.4
    res = env.step([0.0])  # thrust = gravity: zero net acceleration
    landing, crash, main, velocity = res.reward_components
    assert velocity == pytest.approx(-0.1 * 0.4)
    assert landing == 0 and crash == 0
    assert main == pytest.approx(-0.05)


def test_hard_touchdown_crashes():
    env = LineLander()
    env.reset(0)
    env.h, env.v = 0.05, -2.0
    res = env.step([0.0])
    assert res.reward_components[1] == -100.0
    assert res.terminated and not res.truncated


def test_landing_delay_and_constant_observation():
    env = LineLander(include_v0_trace=True)
    env.reset(0)
    env.h, env.v = 0.01, -0.5
    res = env.step([0.0])
    assert env.on_ground
    obs_seen, traces = [], []
    steps = 0
    while not res.terminated:
        res = env.step([0.0])
        steps += 1
        obs_seen.append(res.obs[:2])
        traces.append(res.obs[2])
    assert steps == 20
    assert res.reward_components[0] == 100.0
    assert all(np.array_equal(o, obs_seen[0]) for o in obs_seen)
    assert np.all(np.diff(traces) > 0)
    assert LineLander.is_success(np.array([res.reward_components]))


def test_trace_is_capped():
    env = LineLander(include_v0_trace=True, landing_hold_steps=1000, max_episode_steps=2000)
    env.reset(0)
    env.h, env.v = 0.01, -0.1
    env.step([0.0])
    for _ in range(600):
        obs = env.step([0.0]).obs
    assert obs[2] == pytest.approx(10.0)


def test_lander_sign_structure():
    rng = np.random.default_rng(5)
    env = LineLander()
    for seed in range(30):
        ep = rollout(env, lambda o: np.tanh(rng.normal(size=1)), seed)
        assert np.all(ep.rewards[:, 0] >= 0)
        assert np.all(ep.rewards[:, 1] <= 0)
        assert np.all(ep.rewards[:, 2] <= 0)


def test_successful_landing_delay_property():
    # scripted soft descent: every success has exactly H steps between touchdown and reward
    env = LineLander()
    def act(o):
        return np.array([np.clip(5 * (-0.5 - o[1]), -1, 1)])
    for seed in range(10):
        ep = rollout(env, act, seed)
        assert env.is_success(ep.rewards)
        touchdown = int(np.flatnonzero(ep.observations[1:, 0] == 0.0)[0])
        assert len(ep) - 1 - touchdown == 20
        assert ep.rewards[-1, 0] == 100.0
        hold = ep.observations[touchdown + 1 :]
        assert np.all(hold == hold[0])


def test_walker_no_motion_truncates():
    env = GapWalker(initial_jitter=0.0)
    ep = rollout(env, lambda o: np.zeros(1), 0)
    assert len(ep) == 200
    assert np.all(ep.rewards[:, 0] == 0) and np.all(ep.rewards[:, 2] == 0)
    assert ep.truncated and not ep.terminated


def test_walker_full_throttle_succeeds():
    env = GapWalker()
    ep = rollout(env, lambda o: np.ones(1), 0)
    assert env.is_success(ep.rewards)
    assert ep.rewards[:, 0].sum() > 3.5


def test_walker_random_policy_usually_fails():
    env = GapWalker()
    rng = np.random.default_rng(0)
    fails = sum(not env.is_success(rollout(env, lambda o: np.tanh(rng.normal(size=1)), i).rewards) for i in range(1000))
    assert fails / 1000 >= 0.8


def test_terminated_and_truncated_exclusive():
    env = GapWalker(max_episode_steps=5)
    ep = rollout(env, lambda o: np.ones(1), 0)
    assert ep.truncated and not ep.terminated


def test_make_env_and_overrides():
    env = make_env("line_lander", {"crash_speed": 2.0})
    assert env.config.crash_speed == 2.0
    assert "gap_start" in env_config_fields("gap_walker")
    with pytest.raises(ValueError):
        make_env("moon")
    with pytest.raises(ValueError):
        make_env("gap_walker", failure_penalty=1.0)


def test_schedule_hazard_random_policy_usually_fails():
    from valuedecomp.experiments import SCHEDULE_ENV

    env = make_env("gap_walker", SCHEDULE_ENV)
    rng = np.random.default_rng(1)
    fails = sum(not env.is_success(rollout(env, lambda o: np.tanh(rng.normal(size=1)), i).rewards) for i in range(1000))
    assert fails / 1000 >= 0.8
