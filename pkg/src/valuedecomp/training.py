"""Synchronous training loop: one gradient step per environment step after warm-up."""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, checkpoint
from .config import dump_config
from .envs import rollout
from .policy import deterministic_action, sample_action
from .replay import ReplayBuffer, Transition
from .sacd import make_trainer_state, update_step

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
TIMING_FILE = "timing.jsonl"
CONFIG_FILE = "config.yaml"


class Streams:
    """Independent generators split from one root seed, one per subsystem."""

    def __init__(self, seed):
        root = np.random.SeedSequence(seed)
        env, noise, replay, init, probe, evaluation = root.spawn(6)
        self.env = np.random.default_rng(env)
        self.noise = np.random.default_rng(noise)
        self.replay = np.random.default_rng(replay)
        self.init = init
        self.probe = np.random.default_rng(probe)
        self.eval = np.random.default_rng(evaluation)

    @staticmethod
    def episode_seed(rng):
        return int(rng.integers(0, 2**63 - 1))


def evaluate_policy(env, policy, episodes, seeds):
    """Deterministic-action rollouts; returns the list of Episodes."""
    return [rollout(env, lambda o: deterministic_action(policy, o), int(s)) for s in seeds[:episodes]]


def eval_returns(episodes, weights):
    """Per-episode component returns and the weighted composite, shape (episodes, m + 1)."""
    rows = []
    for ep in episodes:
        comp = ep.rewards.sum(axis=0)
        rows.append(np.append(comp, comp @ weights))
    return np.array(rows).reshape(len(episodes), len(weights) + 1)


class MetricLog:
    """Append-only JSON-lines writer; flushed after every record."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        self._fh = None

    def write(self, record):
        if self.path is None:
            return
        if self._fh is None:
            self._fh = open(self.path, "w")
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_metrics(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class _Accumulator:
    names: tuple
    n: int = 0
    sums: dict = field(default_factory=dict)

    def add(self, metrics):
        self.n += 1
        vals = {
            "policy_loss": metrics.policy_loss,
            "alpha": metrics.alpha,
            "alpha_loss": metrics.alpha_loss,
            "critic_grad_norm": metrics.critic_grad_norm,
            "policy_grad_norm": metrics.policy_grad_norm,
            "mean_logp": metrics.mean_logp,
        }
        for k, v in vals.items():
            self.sums[k] = self.sums.get(k, 0.0) + v
        self.sums["critic_loss"] = self.sums.get("critic_loss", 0.0) + metrics.critic_losses
        if metrics.cagrad_weights is not None:
            self.sums["cagrad_weight"] = self.sums.get("cagrad_weight", 0.0) + metrics.cagrad_weights

    def flush(self):
        out = {}
        for k, v in self.sums.items():
            mean = v / self.n
            if isinstance(mean, np.ndarray):
                out[k] = {n: float(x) for n, x in zip(self.names, mean)}
            else:
                out[k] = float(mean)
        self.n = 0
        self.sums = {}
        return out


@dataclass
class TrainResult:
    state: object
    buffer: ReplayBuffer
    records: list
    run_dir: Path = None
    env_steps: int = 0


def checkpoint_path(run_dir, step):
    return Path(run_dir) / "checkpoints" / f"ckpt_{step:08d}.bin"


def train(config, run_dir=None, on_record=None):
    """Run the configured training; writes artifacts when ``run_dir`` is given."""
    tr = config.training
    cfg = config.agent
    streams = Streams(config.seed)
    env = config.make_env()
    eval_env = config.make_env()
    state = make_trainer_state(cfg, config.components, env.obs_dim, env.action_dim, streams.init)
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, len(env.components), tr["replay_capacity"])
    names = state.head_names
    env_names = tuple(env.components)

    metric_log = MetricLog(None)
    timing_log = MetricLog(None)
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / CONFIG_FILE).write_text(dump_config(config))
        checkpoint.save(checkpoint_path(run_dir, 0), state, config)
        metric_log = MetricLog(run_dir / METRICS_FILE)
        timing_log = MetricLog(run_dir / TIMING_FILE)

    acc = _Accumulator(names)
    records = []
    started = time.perf_counter()
    total = tr["total_gradient_steps"]
    d = env.action_dim
    obs = env.reset(streams.episode_seed(streams.env))
    env_steps = 0
    try:
        while state.step < total:
            if env_steps < tr["learning_starts"]:
                action = streams.noise.uniform(-1.0, 1.0, size=d)
            else:
                action, _ = sample_action(state.policy, obs, streams.noise.standard_normal(d))
            res = env.step(action)
            buffer.push(Transition(obs, action, res.reward_components, res.obs, res.terminated))
            env_steps += 1
            obs = res.obs
            if res.terminated or res.truncated:
                obs = env.reset(streams.episode_seed(streams.env))
            if env_steps < tr["learning_starts"] or len(buffer) < cfg.batch_size:
                continue
            batch = buffer.sample(cfg.batch_size, streams.replay)
            state, metrics = update_step(state, batch, streams.noise)
            acc.add(metrics)
            if state.step % tr["eval_every"] == 0 or state.step == total:
                record = {"step": state.step, "env_steps": env_steps}
                record.update(acc.flush())
                w = state.weights()
                record["weights"] = {n: float(x) for n, x in zip(env_names, w[: len(env_names)])}
                record.update(_evaluate(config, state, eval_env, buffer, streams))
                records.append(record)
                metric_log.write(record)
                timing_log.write({"step": state.step, "wall_clock": time.perf_counter() - started})
                if on_record is not None:
                    on_record(record)
                log.info("step %d composite return %.3f", state.step, record["eval_return"]["composite"])
            every = tr["checkpoint_every"]
            if run_dir is not None and every and state.step % every == 0 and state.step != total:
                checkpoint.save(checkpoint_path(run_dir, state.step), state, config)
    finally:
        if run_dir is not None and state.step > 0:
            checkpoint.save(checkpoint_path(run_dir, state.step), state, config)
        metric_log.close()
        timing_log.close()
    return TrainResult(state, buffer, records, run_dir, env_steps)


def _evaluate(config, state, eval_env, buffer, streams):
    tr = config.training
    names = list(eval_env.components)
    env_w = state.weights()[: len(names)]
    seeds = [Streams.episode_seed(streams.eval) for _ in range(tr["eval_episodes"])]
    episodes = evaluate_policy(eval_env, state.policy, tr["eval_episodes"], seeds)
    out = {}
    if episodes:
        rets = eval_returns(episodes, env_w).mean(axis=0)
        out["eval_return"] = {n: float(x) for n, x in zip(names + ["composite"], rets)}
        out["eval_success_rate"] = float(np.mean([eval_env.is_success(ep.rewards) for ep in episodes]))
    else:
        out["eval_return"] = {n: 0.0 for n in names + ["composite"]}
    n_probe = min(tr["probe_states"], len(buffer))
    if n_probe and config.agent.variant.decomposed:
        probes = buffer.sample(n_probe, streams.probe).s
        mean, count = analysis.probe_fractional_influence(state.critic, state.policy, probes, state.weights())
        out["influence"] = {n: float(x) for n, x in zip(state.head_names, mean)}
        out["influence_count"] = count
    return out
