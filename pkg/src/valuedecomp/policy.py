"""Tanh-squashed diagonal Gaussian policy on top of the MLP substrate."""

from dataclasses import dataclass

import numpy as np

from .approximator import MlpSpec, _as_batch, backward_cache, forward_cache, mlp_init

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def log1m_tanh_sq(z):
    """log(1 - tanh(z)^2) without cancellation for large |z|."""
    return 2.0 * (np.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


@dataclass
class PolicyNetwork:
    spec: MlpSpec
    params: np.ndarray
    log_std_bounds: tuple = (LOG_STD_MIN, LOG_STD_MAX)

    @classmethod
    def create(cls, obs_dim, action_dim, hidden_sizes=(256, 256), seed=0):
        spec = MlpSpec(obs_dim, 2 * action_dim, hidden_sizes)
        return cls(spec, mlp_init(spec, seed))

    @property
    def obs_dim(self):
        return self.spec.input_dim

    @property
    def action_dim(self):
        return self.spec.output_dim // 2


@dataclass
class SampleCache:
    """Everything the reparameterized backward pass needs."""

    inputs: list
    pre: list
    raw_log_std: np.ndarray
    std: np.ndarray
    noise: np.ndarray
    action: np.ndarray


def heads(policy, s):
    """Mean and clamped log-std for a batch of states."""
    s, _ = _as_batch(s, policy.obs_dim, "policy state")
    out, inputs, pre = forward_cache(policy.params, policy.spec, s)
    d = policy.action_dim
    lo, hi = policy.log_std_bounds
    return out[:, :d], np.clip(out[:, d:], lo, hi), out[:, d:], inputs, pre


def sample_with_cache(policy, s, noise):
    s_arr = np.asarray(s, dtype=np.float64)
    single = s_arr.ndim == 1
    mu, log_std, raw, inputs, pre = heads(policy, s_arr)
    noise = np.asarray(noise, dtype=np.float64).reshape(mu.shape)
    std = np.exp(log_std)
    z = mu + std * noise
    a = np.tanh(z)
    logp = np.sum(-0.5 * noise**2 - log_std - _HALF_LOG_2PI - log1m_tanh_sq(z), axis=1)
    cache = SampleCache(inputs, pre, raw, std, noise, a)
    if single:
        return a[0], float(logp[0]), cache
    return a, logp, cache


def sample_action(policy, s, noise):
    """Reparameterized draw ``a = tanh(mu + std * noise)`` and its log-density."""
    a, logp, _ = sample_with_cache(policy, s, noise)
    return a, logp


def deterministic_action(policy, s):
    s_arr = np.asarray(s, dtype=np.float64)
    mu = heads(policy, s_arr)[0]
    a = np.tanh(mu)
    return a[0] if s_arr.ndim == 1 else a


def sample_backward(policy, cache, grad_action, grad_logp):
    """Parameter gradient of ``sum(grad_action * a) + sum(grad_logp * logp)``.

    ``grad_action`` has shape (batch, action_dim) and ``grad_logp`` shape (batch,).
    Rows whose raw log-std sits outside the clamp contribute nothing through that head.
    """
    a = cache.action
    grad_action = np.asarray(grad_action, dtype=np.float64).reshape(a.shape)
    grad_logp = np.asarray(grad_logp, dtype=np.float64).reshape(a.shape[0], 1)
    # d logp / dz = 2 tanh(z); the Gaussian part has no z-dependence once noise is fixed
    gz = grad_action * (1.0 - a * a) + grad_logp * 2.0 * a
    g_log_std = gz * cache.std * cache.noise - grad_logp
    lo, hi = policy.log_std_bounds
    inside = (cache.raw_log_std >= lo) & (cache.raw_log_std <= hi)
    upstream = np.concatenate([gz, g_log_std * inside], axis=1)
    grad, _ = backward_cache(policy.params, policy.spec, cache.inputs, cache.pre, upstream, need_input_grad=False)
    return grad
