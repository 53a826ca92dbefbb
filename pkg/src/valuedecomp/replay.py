"""Ring buffer of decomposed transitions with uniform sampling."""

import threading
from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminated: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminated: np.ndarray

    def __len__(self):
        return self.s.shape[0]

    def row(self, i):
        return Transition(self.s[i], self.a[i], self.r[i], self.s_next[i], bool(self.terminated[i]))


class ReplayBuffer:
    """Fixed-capacity storage; once full, the oldest transition is overwritten first."""

    def __init__(self, obs_dim, action_dim, n_components, capacity=1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.n_components = int(n_components)
        self._s = np.zeros((capacity, obs_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros((capacity, n_components))
        self._s2 = np.zeros((capacity, obs_dim))
        self._d = np.zeros(capacity, dtype=bool)
        self.insertions = 0
        self._lock = threading.Lock()

    def __len__(self):
        return min(self.insertions, self.capacity)

    def push(self, t):
        r = np.asarray(t.r, dtype=np.float64)
        if r.shape != (self.n_components,):
            raise ValueError(f"reward vector has shape {r.shape}, buffer expects ({self.n_components},)")
        values = (t.s, t.a, r, t.s_next)
        if not all(np.all(np.isfinite(x)) for x in values):
            raise ValueError("transition contains non-finite entries")
        with self._lock:
            i = self.insertions % self.capacity
            self._s[i] = t.s
            self._a[i] = t.a
            self._r[i] = r
            self._s2[i] = t.s_next
            self._d[i] = bool(t.terminated)
            self.insertions += 1

    def gather(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        with self._lock:
            if np.any(idx < 0) or np.any(idx >= len(self)):
                raise IndexError("index outside the filled part of the buffer")
            return Batch(self._s[idx].copy(), self._a[idx].copy(), self._r[idx].copy(), self._s2[idx].copy(), self._d[idx].copy())

    def sample(self, batch_size, rng):
        """Uniform draw with replacement; ``rng`` is a Generator or an integer seed."""
        if len(self) == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        rng = np.random.default_rng(rng)
        return self.gather(rng.integers(0, len(self), size=batch_size))

    def ordered(self):
        """All stored transitions from oldest to newest."""
        n = len(self)
        start = self.insertions % self.capacity if self.insertions > self.capacity else 0
        return self.gather((start + np.arange(n)) % self.capacity)
