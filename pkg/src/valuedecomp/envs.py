"""Toy continuous-control environments that emit one reward per component.

``LineLander``: a 1-D vertical lander. The landing bonus only arrives after the
craft has sat motionless on the ground for ``landing_hold_steps`` steps, during
which the physical observation does not change. An optional zero-velocity
trace feature makes that wait observable.

``GapWalker``: a 1-D walker with a cliff behind the start and a gap ahead that
can only be crossed at speed. A random policy almost always falls.
"""

from dataclasses import dataclass, fields, replace

import numpy as np


class EnvUsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    component_names: tuple
    default_weights: tuple
    max_episode_steps: int = 1000

    def __post_init__(self):
        if len(self.component_names) < 1 or len(self.component_names) != len(self.default_weights):
            raise ValueError("component_names and default_weights must have equal non-zero length")
        if not np.all(np.isfinite(self.default_weights)):
            raise ValueError("weights must be finite")

    @property
    def n_components(self):
        return len(self.component_names)


@dataclass
class StepResult:
    obs: np.ndarray
    reward_components: np.ndarray
    terminated: bool
    truncated: bool


@dataclass(frozen=True)
class LineLanderConfig:
    gravity: float = 1.0
    dt: float = 0.1
    max_thrust: float = 2.0
    fuel_cost_coeff: float = 0.05
    crash_speed: float = 1.0
    crash_penalty: float = -100.0
    landing_reward: float = 100.0
    landing_hold_steps: int = 20
    velocity_shaping_coeff: float = 0.1
    velocity_zero_threshold: float = 1e-3
    trace_normalizer: float = 40.0
    include_v0_trace: bool = False
    initial_height: tuple = (5.0, 10.0)
    max_episode_steps: int = 1000

    def __post_init__(self):
        if self.landing_hold_steps < 1:
            raise ValueError("landing_hold_steps must be >= 1")
        if self.trace_normalizer <= 0:
            raise ValueError("trace_normalizer must be positive")
        if self.crash_penalty > 0 or self.landing_reward < 0 or self.fuel_cost_coeff < 0:
            raise ValueError("crash must be non-positive; landing and fuel cost non-negative")
        object.__setattr__(self, "initial_height", tuple(float(h) for h in self.initial_height))


@dataclass(frozen=True)
class GapWalkerConfig:
    dt: float = 0.1
    accel: float = 2.0
    drag: float = 0.5
    control_cost_coeff: float = 0.01
    failure_penalty: float = -100.0
    cliff_x: float = -1.0
    gap_start: float = 2.5
    gap_width: float = 1.0
    jump_speed: float = 1.2
    initial_jitter: float = 0.1
    position_scale: float = 0.1
    max_episode_steps: int = 200

    def __post_init__(self):
        if self.failure_penalty >= 0:
            raise ValueError("failure penalty must be strictly negative")
        if not self.cliff_x < 0 < self.gap_start:
            raise ValueError("the start must lie between the cliff and the gap")


class _Env:
    config_cls = None
    name = ""
    components = ()
    obs_dim = 0
    action_dim = 1

    def __init__(self, config=None, **overrides):
        config = config if config is not None else self.config_cls()
        self.config = replace(config, **overrides) if overrides else config
        self._done = True
        self._t = 0

    def component_spec(self):
        return EnvSpec(
            name=self.name,
            obs_dim=self.obs_dim,
            action_dim=self.action_dim,
            component_names=tuple(self.components),
            default_weights=tuple(1.0 for _ in self.components),
            max_episode_steps=self.config.max_episode_steps,
        )

    def _check_step(self, action):
        if self._done:
            raise EnvUsageError("step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.action_dim,):
            raise EnvUsageError(f"expected action of length {self.action_dim}, got {a.shape}")
        return np.clip(a, -1.0, 1.0)

    def _finish(self, rewards, terminated):
        self._t += 1
        truncated = (not terminated) and self._t >= self.config.max_episode_steps
        self._done = terminated or truncated
        return StepResult(self._obs(), np.asarray(rewards, dtype=np.float64), terminated, truncated)


class LineLander(_Env):
    config_cls = LineLanderConfig
    name = "line_lander"
    components = ("landing", "crash", "main", "velocity")

    @property
    def obs_dim(self):
        return 3 if self.config.include_v0_trace else 2

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        lo, hi = self.config.initial_height
        self.h = float(rng.uniform(lo, hi))
        self.v = 0.0
        self.on_ground = False
        self.at_rest = False
        self.steps_at_rest = 0
        self._t = 0
        self._done = False
        return self._obs()

    def v0_trace(self):
        c = self.config.trace_normalizer
        return min(self.steps_at_rest, 10.0 * c) / c

    def _obs(self):
        if self.config.include_v0_trace:
            return np.array([self.h, self.v, self.v0_trace()])
        return np.array([self.h, self.v])

    def thrust(self, u):
        return self.config.max_thrust * (u + 1.0) / 2.0

    def step(self, action):
        u = self._check_step(action)[0]
        cfg = self.config
        landing = crash = main = velocity = 0.0
        terminated = False
        if self.on_ground:
            # engine is cut after touchdown; the craft waits for the landing to register
            self.steps_at_rest += 1
            if self.steps_at_rest == cfg.landing_hold_steps:
                landing = cfg.landing_reward
                terminated = True
        else:
            thrust = self.thrust(u)
            main = -cfg.fuel_cost_coeff * thrust
            h = self.h + self.v * cfg.dt
            v = self.v + (thrust - cfg.gravity) * cfg.dt
            if h <= 0.0:
                self.h = 0.0
                if abs(v) > cfg.crash_speed:
                    self.v = v
                    crash = cfg.crash_penalty
                    terminated = True
                else:
                    self.v = 0.0
                    self.on_ground = True
                    self.at_rest = True
                    self.steps_at_rest = 0
            else:
                self.h, self.v = h, v
                if abs(v) < cfg.velocity_zero_threshold:
                    self.steps_at_rest = self.steps_at_rest + 1 if self.at_rest else 0
                    self.at_rest = True
                else:
                    self.at_rest = False
                    self.steps_at_rest = 0
            velocity = -cfg.velocity_shaping_coeff * abs(self.v)
        return self._finish([landing, crash, main, velocity], terminated)

    @staticmethod
    def is_success(reward_components):
        """An episode succeeded when it collected the landing bonus."""
        return bool(np.asarray(reward_components)[..., 0].sum() > 0.0)


class GapWalker(_Env):
    config_cls = GapWalkerConfig
    name = "gap_walker"
    components = ("forward", "control", "failure")
    obs_dim = 2

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        j = self.config.initial_jitter
        self.x = float(rng.uniform(-j, j))
        self.v = 0.0
        self._t = 0
        self._done = False
        return self._obs()

    def _obs(self):
        return np.array([self.x * self.config.position_scale, self.v])

    def in_gap(self, x):
        cfg = self.config
        return cfg.gap_start <= x < cfg.gap_start + cfg.gap_width

    def step(self, action):
        u = self._check_step(action)[0]
        cfg = self.config
        x = self.x + self.v * cfg.dt
        v = self.v + (cfg.accel * u - cfg.drag * self.v) * cfg.dt
        forward = x - self.x
        control = -cfg.control_cost_coeff * u * u
        failure = 0.0
        terminated = False
        if x < cfg.cliff_x or (self.in_gap(x) and v < cfg.jump_speed):
            failure = cfg.failure_penalty
            terminated = True
        self.x, self.v = x, v
        return self._finish([forward, control, failure], terminated)

    @staticmethod
    def is_success(reward_components):
        """An episode succeeded when it never fell."""
        return bool(np.asarray(reward_components)[..., 2].min(initial=0.0) == 0.0)


ENVIRONMENTS = {LineLander.name: LineLander, GapWalker.name: GapWalker}


def make_env(name, config=None, **overrides):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    if isinstance(config, dict):
        overrides = {**config, **overrides}
        config = None
    return cls(config, **overrides)


def env_config_fields(name):
    return {f.name: f.default for f in fields(ENVIRONMENTS[name].config_cls)}


def component_spec(env):
    return env.component_spec()


@dataclass
class Episode:
    """One rolled-out episode; ``observations`` has one more row than ``actions``."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: bool
    truncated: bool

    def __len__(self):
        return len(self.actions)


def rollout(env, act, seed, max_steps=None):
    """Run one episode with ``act(obs) -> action``."""
    obs = [env.reset(seed)]
    actions, rewards = [], []
    terminated = truncated = False
    limit = env.config.max_episode_steps if max_steps is None else max_steps
    while len(actions) < limit:
        a = np.asarray(act(obs[-1]), dtype=np.float64).reshape(env.action_dim)
        res = env.step(a)
        actions.append(a)
        rewards.append(res.reward_components)
        obs.append(res.obs)
        terminated, truncated = res.terminated, res.truncated
        if terminated or truncated:
            break
    n = len(env.components)
    return Episode(
        np.array(obs),
        np.array(actions).reshape(-1, env.action_dim),
        np.array(rewards).reshape(-1, n),
        terminated,
        truncated,
    )
