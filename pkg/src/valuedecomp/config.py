"""Run configuration: YAML loading with line-numbered diagnostics, validation, hashing."""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from .envs import ENVIRONMENTS, env_config_fields, make_env
from .sacd import Variant, VariantConfig
from .shaping import ComponentSpec, Schedule


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


TRAINING_DEFAULTS = {
    "total_gradient_steps": 100_000,
    "learning_starts": 1_000,
    "replay_capacity": 1_000_000,
    "eval_every": 1_000,
    "eval_episodes": 10,
    "probe_states": 64,
    "checkpoint_every": 0,
}
AGENT_KEYS = {f.name for f in fields(VariantConfig)}
COMPONENT_KEYS = {"name", "weight", "sign", "constraints", "schedule"}
SCHEDULE_KEYS = {"warmup", "beta", "floor_weight"}
TOP_KEYS = {"env", "agent", "components", "training", "seed", "output_dir"}
FLOAT_AGENT_KEYS = {
    "gamma", "lr_actor", "lr_critic", "target_update_rate", "initial_alpha", "cagrad_c", "cagrad_step",
}


def _as_float(value, path, fail):
    # YAML 1.1 reads "3e-4" as a string
    if isinstance(value, bool):
        fail("expected a number", path)
    try:
        return float(value)
    except (TypeError, ValueError):
        fail("expected a number", path)


@dataclass
class RunConfig:
    env: str = "line_lander"
    env_config: dict = field(default_factory=dict)
    agent: VariantConfig = field(default_factory=VariantConfig)
    components: list = field(default_factory=list)
    training: dict = field(default_factory=lambda: dict(TRAINING_DEFAULTS))
    seed: int = 0
    output_dir: str = "runs/default"

    def make_env(self):
        return make_env(self.env, **self.env_config)

    def component_specs(self):
        return list(self.components)

    def to_dict(self):
        agent = asdict(self.agent)
        agent["variant"] = self.agent.variant.value
        agent["hidden_sizes"] = list(self.agent.hidden_sizes)
        comps = []
        for c in self.components:
            d = {"name": c.name, "weight": c.weight, "sign": c.sign.value, "constraints": sorted(m.value for m in c.modes)}
            if c.schedule is not None:
                d["schedule"] = asdict(c.schedule)
            comps.append(d)
        env_cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.env_config.items()}
        return {
            "env": {"name": self.env, "config": env_cfg},
            "agent": agent,
            "components": comps,
            "training": dict(self.training),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def hash(self):
        """SHA-256 over everything that determines the run (the output directory excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes):
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new


# ---------------------------------------------------------------- yaml plumbing


def _line_map(text):
    """Map of dotted key path -> 1-based line number for a YAML mapping document."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                p = f"{path}.{key.value}" if path else str(key.value)
                lines[p] = key.start_mark.line + 1
                walk(value, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                p = f"{path}[{i}]"
                lines[p] = item.start_mark.line + 1
                walk(item, p)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, source=str(path))


def parse_config(text, source=None):
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None, source) from None
    return from_dict(raw, _line_map(text), source)


def from_dict(raw, lines=None, source=None):
    lines = lines or {}

    def fail(msg, path):
        raise ConfigError(f"{path}: {msg}" if path else msg, lines.get(path), source)

    def check_keys(d, allowed, path):
        if not isinstance(d, dict):
            fail("expected a mapping", path)
        for k in d:
            if k not in allowed:
                p = f"{path}.{k}" if path else str(k)
                fail(f"unknown key {k!r}", p)

    check_keys(raw, TOP_KEYS, "")
    env = raw.get("env", {"name": "line_lander"})
    if isinstance(env, str):
        env = {"name": env}
    check_keys(env, {"name", "config"}, "env")
    env_name = env.get("name", "line_lander")
    if env_name not in ENVIRONMENTS:
        fail(f"unknown environment {env_name!r}; choose from {sorted(ENVIRONMENTS)}", "env.name")
    env_cfg = dict(env.get("config") or {})
    known = env_config_fields(env_name)
    check_keys(env_cfg, set(known), "env.config")
    for k, v in env_cfg.items():
        if isinstance(v, list):
            env_cfg[k] = tuple(float(x) for x in v)
        elif isinstance(known[k], float):
            env_cfg[k] = _as_float(v, f"env.config.{k}", fail)
    try:
        probe_env = make_env(env_name, **env_cfg)
    except (TypeError, ValueError) as exc:
        fail(str(exc), "env.config")
    names = list(probe_env.components)

    agent = dict(raw.get("agent") or {})
    check_keys(agent, AGENT_KEYS, "agent")
    for k in FLOAT_AGENT_KEYS & set(agent):
        agent[k] = _as_float(agent[k], f"agent.{k}", fail)
    try:
        agent_cfg = VariantConfig(**agent)
    except (TypeError, ValueError) as exc:
        named = [k for k in agent if k in str(exc)] or (["variant"] if "Variant" in str(exc) else [])
        fail(str(exc), f"agent.{named[0]}" if named else "agent")

    by_name = {}
    for i, comp in enumerate(raw.get("components") or []):
        path = f"components[{i}]"
        check_keys(comp, COMPONENT_KEYS, path)
        name = comp.get("name")
        if name not in names:
            fail(f"component {name!r} is not produced by {env_name}; expected one of {names}", f"{path}.name")
        sched = comp.get("schedule")
        if sched is not None:
            check_keys(sched, SCHEDULE_KEYS, f"{path}.schedule")
            sched = {k: (v if k == "floor_weight" else _as_float(v, f"{path}.schedule.{k}", fail)) for k, v in sched.items()}
        try:
            by_name[name] = ComponentSpec(
                name=name,
                weight=_as_float(comp.get("weight", 1.0), f"{path}.weight", fail),
                sign=comp.get("sign", "free"),
                modes=frozenset(comp.get("constraints") or ()),
                schedule=Schedule(**sched) if sched is not None else None,
            )
        except (TypeError, ValueError) as exc:
            fail(str(exc), path)
    components = [by_name.get(n, ComponentSpec(n)) for n in names]

    training = dict(TRAINING_DEFAULTS)
    given = raw.get("training") or {}
    check_keys(given, set(TRAINING_DEFAULTS), "training")
    for k, v in given.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            fail("expected a non-negative integer", f"training.{k}")
        training[k] = v
    if training["eval_every"] < 1:
        fail("eval_every must be >= 1", "training.eval_every")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        fail("seed must be an integer", "seed")
    return RunConfig(
        env=env_name,
        env_config=env_cfg,
        agent=agent_cfg,
        components=components,
        training=training,
        seed=seed,
        output_dir=str(raw.get("output_dir", "runs/default")),
    )


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=True)
