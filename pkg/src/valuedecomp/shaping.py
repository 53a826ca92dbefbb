"""Per-component weight schedules and value sign constraints."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Sign(str, Enum):
    FREE = "free"
    NON_POSITIVE = "non_positive"
    NON_NEGATIVE = "non_negative"


class ConstraintMode(str, Enum):
    CLIP_TARGET = "clip_target"
    PENALTY = "penalty"


@dataclass(frozen=True)
class Schedule:
    warmup: float = 100.0
    beta: float = 0.0004
    floor_weight: bool = False

    def __post_init__(self):
        if self.warmup <= 0 or self.beta <= 0:
            raise ValueError("schedule warmup and beta must be positive")


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    weight: float = 1.0
    sign: Sign = Sign.FREE
    modes: frozenset = field(default_factory=frozenset)
    schedule: Schedule = None

    def __post_init__(self):
        object.__setattr__(self, "sign", Sign(self.sign))
        object.__setattr__(self, "modes", frozenset(ConstraintMode(m) for m in self.modes))
        if self.modes and self.sign is Sign.FREE:
            raise ValueError(f"component {self.name!r}: constraints need a non-free sign")
        if not np.isfinite(self.weight):
            raise ValueError(f"component {self.name!r}: weight must be finite")

    @property
    def clips_target(self):
        return ConstraintMode.CLIP_TARGET in self.modes

    @property
    def penalized(self):
        return ConstraintMode.PENALTY in self.modes

    def weight_at(self, step):
        if self.schedule is None:
            return self.weight
        s = self.schedule
        w = schedule_weight(step, s.warmup, s.beta)
        if s.floor_weight:
            w = max(0.01, w)
        return self.weight * w


def schedule_weight(t, warmup=100.0, beta=0.0004):
    """tanh(beta * |t - warmup|_+) where |x|_+ is 0.01 for negative x."""
    x = t - warmup
    return float(np.tanh(beta * (0.01 if x < 0 else x)))


def clip_target(sign, y):
    sign = Sign(sign)
    if sign is Sign.NON_POSITIVE:
        return np.minimum(0.0, y)
    if sign is Sign.NON_NEGATIVE:
        return np.maximum(0.0, y)
    raise ValueError("clip_target needs a constrained sign")


def sign_penalty(sign, q):
    """Half the magnitude of the sign violation; zero on the feasible side."""
    sign = Sign(sign)
    q = np.asarray(q, dtype=np.float64)
    if sign is Sign.NON_POSITIVE:
        out = np.where(q > 0.0, 0.5 * q, 0.0)
    elif sign is Sign.NON_NEGATIVE:
        out = np.where(q < 0.0, -0.5 * q, 0.0)
    else:
        raise ValueError("sign_penalty needs a constrained sign")
    return out if out.ndim else float(out)


def sign_penalty_grad(sign, q):
    sign = Sign(sign)
    q = np.asarray(q, dtype=np.float64)
    if sign is Sign.NON_POSITIVE:
        return np.where(q > 0.0, 0.5, 0.0)
    if sign is Sign.NON_NEGATIVE:
        return np.where(q < 0.0, -0.5, 0.0)
    raise ValueError("sign_penalty needs a constrained sign")


def default_components(names):
    return [ComponentSpec(n) for n in names]


def weight_vector(components, step, with_entropy=True):
    """Environmental weights at a gradient step, with the entropy weight 1 appended."""
    w = [c.weight_at(step) for c in components]
    if with_entropy:
        w.append(1.0)
    return np.array(w, dtype=np.float64)
