"""Fixed-architecture ReLU MLP with analytic backprop, plus Adam.

Parameters live in one flat float64 vector laid out layer by layer: the
weight matrix of shape ``(fan_in, fan_out)`` in row-major order, then the bias.
A layer computes ``x @ W + b``; ReLU follows every layer except the last.

All functions accept a single input vector or a batch (rows are samples).
For a batch, parameter gradients are summed over rows.
"""

from dataclasses import dataclass, field

import numpy as np


class InputShapeError(ValueError):
    pass


class OptimizerError(FloatingPointError):
    def __init__(self, index, value):
        super().__init__(f"non-finite gradient entry at index {index}: {value!r}")
        self.index = index
        self.value = value


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_sizes: tuple = (256, 256)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a non-empty sequence of positive ints")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self):
        sizes = (self.input_dim, *self.hidden_sizes, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_dims)

    def slices(self):
        """(weight_slice, bias_slice, shape) per layer into the flat vector."""
        out = []
        offset = 0
        for fan_in, fan_out in self.layer_dims:
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            out.append((w, b, (fan_in, fan_out)))
        return out

    def trunk_mask(self):
        """Boolean mask over parameters, True for every layer but the output layer."""
        mask = np.zeros(self.n_params, dtype=bool)
        w, _, _ = self.slices()[-1]
        mask[: w.start] = True
        return mask


def unpack(params, spec):
    """List of ``(W, b)`` views into ``params``."""
    if params.shape != (spec.n_params,):
        raise InputShapeError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    return [(params[w].reshape(shape), params[b]) for w, b, shape in spec.slices()]


def mlp_init(spec, seed):
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for w, _, (fan_in, fan_out) in spec.slices():
        bound = 1.0 / np.sqrt(fan_in)
        params[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return params


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputShapeError(f"{what}: expected last dimension {dim}, got shape {x.shape}")
    return x, single


def forward_cache(params, spec, x):
    """Forward pass on a 2-D batch; returns (output, layer inputs, pre-activations)."""
    layers = unpack(params, spec)
    inputs, pre = [], []
    h = x
    for n, (W, b) in enumerate(layers):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = z if n == len(layers) - 1 else np.maximum(z, 0.0)
    return h, inputs, pre


def backward_cache(params, spec, inputs, pre, upstream, need_input_grad=True):
    layers = unpack(params, spec)
    grad = np.zeros(spec.n_params)
    views = unpack(grad, spec)
    delta = upstream
    for n in range(len(layers) - 1, -1, -1):
        W, _ = layers[n]
        gW, gb = views[n]
        if n < len(layers) - 1:
            delta = delta * (pre[n] > 0.0)
        gW[...] = inputs[n].T @ delta
        gb[...] = delta.sum(axis=0)
        if n > 0 or need_input_grad:
            delta = delta @ W.T
    return grad, (delta if need_input_grad else None)


def mlp_forward(params, spec, x):
    x, single = _as_batch(x, spec.input_dim, "mlp_forward input")
    out, _, _ = forward_cache(params, spec, x)
    return out[0] if single else out


def mlp_backward(params, spec, x, upstream):
    """Gradients of ``sum(upstream * mlp_forward(x))`` w.r.t. params and x."""
    x, single = _as_batch(x, spec.input_dim, "mlp_backward input")
    upstream, _ = _as_batch(upstream, spec.output_dim, "mlp_backward upstream")
    if upstream.shape[0] != x.shape[0]:
        raise InputShapeError("input and upstream batch sizes differ")
    _, inputs, pre = forward_cache(params, spec, x)
    grad, grad_x = backward_cache(params, spec, inputs, pre, upstream)
    return grad, (grad_x[0] if single else grad_x)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, **hyper):
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam step. Returns new (params, state); inputs are not modified."""
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape):
        raise InputShapeError("params, grads and optimizer moments must have equal length")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise OptimizerError(int(bad[0]), float(grads[bad[0]]))
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, b1, b2, state.eps)
