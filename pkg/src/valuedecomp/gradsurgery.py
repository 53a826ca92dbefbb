"""CAGrad combination of per-component critic gradients."""

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels


class GradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    iters: int = 200
    step: float = 0.1


class HeadGradients:
    """Stack of per-head parameter gradients, shape (heads, params)."""

    def __init__(self, grads):
        g = np.array(grads, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1:
            raise ValueError("head gradients must form a (heads, params) matrix")
        self.matrix = g

    @property
    def n_heads(self):
        return self.matrix.shape[0]

    @property
    def mean(self):
        return self.matrix.mean(axis=0)

    def check_finite(self):
        bad = np.argwhere(~np.isfinite(self.matrix))
        if bad.size:
            head, idx = bad[0]
            raise GradientError(f"non-finite gradient for head {head} at parameter {idx}")


def _as_heads(grads):
    return grads if isinstance(grads, HeadGradients) else HeadGradients(grads)


def cagrad_objective(w, grads, c):
    """F(w) = g_w . g_0 + c ||g_0|| ||g_w||, with g_w the 1/k-scaled weighted sum."""
    grads = _as_heads(grads)
    k = grads.n_heads
    w = np.asarray(w, dtype=np.float64)
    g_w = w @ grads.matrix / k
    g_0 = grads.mean
    return float(g_w @ g_0 + c * np.linalg.norm(g_0) * np.linalg.norm(g_w))


def normalized_gram(grads):
    """Gram matrix of head gradients divided by their mean L2 norm (solver scale only)."""
    g = _as_heads(grads).matrix
    scale = np.linalg.norm(g, axis=1).mean()
    if scale == 0.0:
        return np.zeros((g.shape[0], g.shape[0]))
    gn = g / scale
    return gn @ gn.T


def cagrad_weights(grads, c=0.5, solver=SolverConfig()):
    grads = _as_heads(grads)
    if grads.n_heads < 2:
        raise ValueError("CAGrad needs at least two heads")
    grads.check_finite()
    return kernels.cagrad_pgd(normalized_gram(grads), c, solver.iters, solver.step)


def cagrad_direction(grads, w, original=False, c=0.5):
    """Weighted sum of the raw head gradients.

    With ``original=True`` returns ``g_0 + c ||g_0|| g_w / ||g_w||`` instead.
    """
    grads = _as_heads(grads)
    w = np.asarray(w, dtype=np.float64)
    if not original:
        # uniform weights are the mean; take it directly so the result is exact
        return grads.mean if np.all(w == w[0]) else w @ grads.matrix
    g_0 = grads.mean
    g_w = w @ grads.matrix / grads.n_heads
    norm_w = np.linalg.norm(g_w)
    if norm_w == 0.0:
        return g_0
    return g_0 + c * np.linalg.norm(g_0) / norm_w * g_w


def simplex_grid(k, resolution=0.01):
    """Every point of the simplex whose coordinates are multiples of ``resolution``."""
    n = int(round(1.0 / resolution))
    pts = []
    for head in itertools.product(range(n + 1), repeat=k - 1):
        rest = n - sum(head)
        if rest >= 0:
            pts.append((*head, rest))
    return np.array(pts, dtype=np.float64) / n


def grid_minimum(grads, c, resolution=0.01):
    """Brute-force minimizer of the CAGrad objective over a simplex grid."""
    grads = _as_heads(grads)
    k = grads.n_heads
    W = simplex_grid(k, resolution)
    g_0 = grads.mean
    G_w = W @ grads.matrix / k
    F = G_w @ g_0 + c * np.linalg.norm(g_0) * np.linalg.norm(G_w, axis=1)
    i = int(np.argmin(F))
    return W[i], float(F[i])
