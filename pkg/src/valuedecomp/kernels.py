"""Hot numeric kernels with a numba path and a pure-numpy path.

Every public function here dispatches to the compiled kernel when numba is
enabled (see ``valuedecomp._accel``) and to the numpy implementation
otherwise. Both paths are kept importable as ``*_numpy`` / ``*_numba`` so the
benchmark and the tests can compare them directly.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, jit

__all__ = [
    "project_simplex",
    "cagrad_pgd",
    "cagrad_gram_objective",
    "discounted_returns",
    "NUMBA_ENABLED",
]


# ---------------------------------------------------------------- numpy path


def project_simplex_numpy(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    rho = np.nonzero(u - css / idx > 0.0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def cagrad_gram_objective_numpy(w, gram, c):
    k = gram.shape[0]
    return _scaled_objective_numpy(w, gram, c) / (k * k)


def _scaled_objective_numpy(w, gram, c):
    # k^2 * F(w); the constant factor does not move the minimizer
    lin = float(w @ gram.sum(axis=1))
    sq_w = max(float(w @ gram @ w), 0.0)
    sq_0 = max(float(gram.sum()), 0.0)
    return lin + c * np.sqrt(sq_0) * np.sqrt(sq_w)


def cagrad_pgd_numpy(gram, c, iters, step):
    k = gram.shape[0]
    row = gram.sum(axis=1)
    root0 = np.sqrt(max(float(gram.sum()), 0.0))
    w = np.full(k, 1.0 / k)
    y = w.copy()
    t = 1.0
    best_w = w.copy()
    best_f = _scaled_objective_numpy(w, gram, c)
    for _ in range(iters):
        gy = gram @ y
        sq = float(y @ gy)
        grad = row + (c * root0 * gy / np.sqrt(sq) if sq > 0.0 else 0.0)
        if np.all(grad == grad[0]):
            break
        w_next = project_simplex_numpy(y - step * grad)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w, t = w_next, t_next
        f = _scaled_objective_numpy(w, gram, c)
        if f < best_f:
            best_f = f
            best_w = w.copy()
    return best_w


def discounted_returns_numpy(rewards, gamma):
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# ---------------------------------------------------------------- numba path


def _project_simplex_src(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1.0)
        if u[i] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        d = v[i] - theta
        out[i] = d if d > 0.0 else 0.0
    return out


def _scaled_objective_src(w, gram, c):
    k = gram.shape[0]
    lin = 0.0
    sq_w = 0.0
    sq_0 = 0.0
    for i in range(k):
        for j in range(k):
            lin += w[i] * gram[i, j]
            sq_w += w[i] * gram[i, j] * w[j]
            sq_0 += gram[i, j]
    if sq_w < 0.0:
        sq_w = 0.0
    if sq_0 < 0.0:
        sq_0 = 0.0
    return lin + c * np.sqrt(sq_0) * np.sqrt(sq_w)


_project_simplex_loop = jit(_project_simplex_src) or _project_simplex_src
_scaled_objective_loop = jit(_scaled_objective_src) or _scaled_objective_src


def _gram_objective_src(w, gram, c):
    k = gram.shape[0]
    return _scaled_objective_loop(w, gram, c) / (k * k)


_gram_objective_loop = jit(_gram_objective_src) or _gram_objective_src


def _cagrad_pgd_src(gram, c, iters, step):
    k = gram.shape[0]
    row = np.zeros(k)
    total = 0.0
    for i in range(k):
        for j in range(k):
            row[i] += gram[i, j]
        total += row[i]
    root0 = np.sqrt(total) if total > 0.0 else 0.0
    w = np.full(k, 1.0 / k)
    y = w.copy()
    t = 1.0
    best_w = w.copy()
    best_f = _scaled_objective_loop(w, gram, c)
    grad = np.empty(k)
    gy = np.empty(k)
    for _ in range(iters):
        sq = 0.0
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += gram[i, j] * y[j]
            gy[i] = acc
            sq += y[i] * acc
        for i in range(k):
            grad[i] = row[i]
            if sq > 0.0:
                grad[i] += c * root0 * gy[i] / np.sqrt(sq)
        flat = True
        for i in range(1, k):
            if grad[i] != grad[0]:
                flat = False
                break
        if flat:
            break
        w_next = _project_simplex_loop(y - step * grad)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w = w_next
        t = t_next
        f = _scaled_objective_loop(w, gram, c)
        if f < best_f:
            best_f = f
            best_w = w.copy()
    return best_w


def _discounted_returns_src(rewards, gamma):
    n, m = rewards.shape
    out = np.empty((n, m))
    acc = np.zeros(m)
    for t in range(n - 1, -1, -1):
        for i in range(m):
            acc[i] = rewards[t, i] + gamma * acc[i]
            out[t, i] = acc[i]
    return out


project_simplex_numba = _project_simplex_loop
cagrad_gram_objective_numba = _gram_objective_loop
cagrad_pgd_numba = jit(_cagrad_pgd_src)
discounted_returns_numba = jit(_discounted_returns_src)


# ---------------------------------------------------------------- dispatch


def project_simplex(v):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if NUMBA_ENABLED:
        return project_simplex_numba(v)
    return project_simplex_numpy(v)


def cagrad_gram_objective(w, gram, c):
    """CAGrad inner objective written in terms of the Gram matrix of head gradients."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    if NUMBA_ENABLED:
        return float(cagrad_gram_objective_numba(w, gram, float(c)))
    return float(cagrad_gram_objective_numpy(w, gram, float(c)))


def cagrad_pgd(gram, c, iters=200, step=0.1):
    """Accelerated projected gradient descent for the CAGrad weights.

    Starts at the uniform point and returns the best iterate seen. Stops early
    when the objective gradient is constant across heads, i.e. there is no
    descent direction inside the simplex.
    """
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    if NUMBA_ENABLED:
        return cagrad_pgd_numba(gram, float(c), int(iters), float(step))
    return cagrad_pgd_numpy(gram, float(c), int(iters), float(step))


def discounted_returns(rewards, gamma):
    """Backward recursion ``G[t] = r[t] + gamma * G[t+1]`` over the rows of ``rewards``."""
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    if rewards.ndim == 1:
        return discounted_returns(rewards[:, None], gamma)[:, 0]
    if rewards.shape[0] == 0:
        return rewards.copy()
    if NUMBA_ENABLED:
        return discounted_returns_numba(rewards, float(gamma))
    return discounted_returns_numpy(rewards, float(gamma))
