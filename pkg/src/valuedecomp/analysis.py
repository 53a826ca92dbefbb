"""Influence metrics, Monte-Carlo component returns and prediction accuracy."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .approximator import backward_cache, forward_cache
from .policy import deterministic_action


class InfluenceMismatch(AssertionError):
    pass


# ---------------------------------------------------------------- critic views


class TwinView:
    """One online twin of a DecomposedCritic seen as a differentiable component model."""

    def __init__(self, critic, twin=0):
        self.critic = critic
        self.twin = twin

    def _cache(self, s, a):
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
        return forward_cache(self.critic.online[self.twin], self.critic.spec, x)

    def values(self, s, a):
        return self._cache(s, a)[0]

    def action_vjp(self, s, a, upstream):
        out, inputs, pre = self._cache(s, a)
        upstream = np.broadcast_to(upstream, out.shape)
        _, gx = backward_cache(self.critic.online[self.twin], self.critic.spec, inputs, pre, upstream)
        return gx[:, -np.atleast_2d(a).shape[1]:]


class MinCompositeView:
    """Per row, the twin whose weighted composite at ``(s, a)`` is smaller (ties: twin 0)."""

    def __init__(self, critic, w):
        self.views = [TwinView(critic, 0), TwinView(critic, 1)]
        self.w = np.asarray(w, dtype=np.float64)

    def choice(self, s, a):
        c0 = self.views[0].values(s, a) @ self.w
        c1 = self.views[1].values(s, a) @ self.w
        return c1 < c0

    def values(self, s, a):
        pick = self.choice(s, a)[:, None]
        return np.where(pick, self.views[1].values(s, a), self.views[0].values(s, a))

    def action_vjp(self, s, a, upstream):
        pick = self.choice(s, a)[:, None]
        return np.where(pick, self.views[1].action_vjp(s, a, upstream), self.views[0].action_vjp(s, a, upstream))


# ---------------------------------------------------------------- influence


@dataclass
class InfluenceSample:
    influence: np.ndarray
    fractional: np.ndarray
    degenerate: bool
    step_size: float = 1.0
    state_id: object = None


def fractional_influence(influence):
    """Normalize non-negative influences to sum to one; all-zero input is degenerate."""
    influence = np.asarray(influence, dtype=np.float64)
    total = influence.sum(axis=-1, keepdims=True)
    degenerate = total[..., 0] == 0.0
    safe = np.where(total == 0.0, 1.0, total)
    frac = np.where(total == 0.0, 0.0, influence / safe)
    if frac.ndim == 1:
        return frac, bool(degenerate)
    return frac, degenerate


def influence_batch(view, s, a_bar, w, step_size=1.0, tol=1e-8):
    """Influence of every head at each row of ``(s, a_bar)``, shape (rows, heads).

    Computed from the definition (gradient of the full composite minus the
    gradient of the composite without head i) and from the weighted per-head
    gradient norm; the two must agree.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    a_bar = np.atleast_2d(np.asarray(a_bar, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    n, k = s.shape[0], w.shape[0]
    full = view.action_vjp(s, a_bar, np.tile(w, (n, 1)))
    by_definition = np.empty((n, k))
    linear = np.empty((n, k))
    for i in range(k):
        w_not = w.copy()
        w_not[i] = 0.0
        ablated = view.action_vjp(s, a_bar, np.tile(w_not, (n, 1)))
        by_definition[:, i] = step_size * np.linalg.norm(full - ablated, axis=1)
        e = np.zeros(k)
        e[i] = 1.0
        head = view.action_vjp(s, a_bar, np.tile(e, (n, 1)))
        linear[:, i] = step_size * abs(w[i]) * np.linalg.norm(head, axis=1)
    scale = max(1.0, float(np.max(linear, initial=0.0)))
    gap = float(np.max(np.abs(by_definition - linear), initial=0.0))
    if gap > tol * scale:
        raise InfluenceMismatch(f"definitional and linear influence differ by {gap:.3e}")
    return linear


def influence(view, s, a_bar, w, step_size=1.0, state_id=None):
    I = influence_batch(view, s, a_bar, w, step_size)[0]
    frac, degenerate = fractional_influence(I)
    return InfluenceSample(I, frac, degenerate, step_size, state_id)


def policy_influence(critic, policy, s, w, step_size=1.0):
    """Influence rows at the policy's deterministic action, read from the min-composite twin."""
    s = np.atleast_2d(s)
    a_bar = deterministic_action(policy, s)
    return influence_batch(MinCompositeView(critic, w), s, a_bar, w, step_size)


def trajectory_influence(observations, critic, policy, w):
    """Fractional influence per visited state; returns (fractions, degenerate flags)."""
    obs = np.asarray(observations, dtype=np.float64)
    k = np.asarray(w).shape[0]
    if obs.shape[0] == 0:
        return np.zeros((0, k)), np.zeros(0, dtype=bool)
    return fractional_influence(policy_influence(critic, policy, obs, w))


def probe_fractional_influence(critic, policy, states, w):
    """Mean fractional influence over probe states, ignoring degenerate probes."""
    frac, degenerate = trajectory_influence(states, critic, policy, w)
    valid = ~degenerate
    if not valid.any():
        return np.zeros(frac.shape[1]), 0
    return frac[valid].mean(axis=0), int(valid.sum())


def influence_training_summary(logs, names=None):
    """Per-step pooled mean fractional influence with columns sorted for stack plots.

    ``logs`` is a list of runs, each a list of metric records carrying ``step``,
    ``influence`` (mapping name -> mean fraction) and ``influence_count``.
    Columns are ordered by the final-step mean, largest first.
    """
    if logs and isinstance(logs[0], dict):
        logs = [logs]
    pooled = {}
    for run in logs:
        for rec in run:
            if not rec.get("influence"):
                continue
            names = names or list(rec["influence"])
            count = rec.get("influence_count", 1)
            vec = np.array([rec["influence"][n] for n in names]) * count
            tot, cnt = pooled.get(rec["step"], (0.0, 0))
            pooled[rec["step"]] = (tot + vec, cnt + count)
    if not pooled:
        raise ValueError("metric log holds no influence snapshots")
    steps = sorted(pooled)
    table = np.array([pooled[t][0] / pooled[t][1] if pooled[t][1] else pooled[t][0] for t in steps])
    order = np.argsort(-table[-1], kind="stable")
    return steps, [names[i] for i in order], table[:, order]


# ---------------------------------------------------------------- returns


@dataclass
class ComponentReturnTrace:
    returns: np.ndarray
    gamma: float
    trajectory_id: object = None


def mc_component_returns(rewards, gamma, trajectory_id=None):
    """Discounted Monte-Carlo return of each component from every step, no bootstrapping."""
    return ComponentReturnTrace(kernels.discounted_returns(rewards, gamma), gamma, trajectory_id)


def iqm(values):
    """Interquartile mean: mean of the central 50% of the values."""
    return float(stats.trim_mean(np.asarray(values, dtype=np.float64), 0.25))


@dataclass
class AccuracyReport:
    names: list
    rmse: np.ndarray
    correlation: np.ndarray
    n_trajectories: int
    n_skipped: int
    undefined_correlation: np.ndarray

    def rows(self):
        for i, n in enumerate(self.names):
            yield [n, self.rmse[i], self.correlation[i], self.n_trajectories, self.n_skipped, int(self.undefined_correlation[i])]


def window_metrics(pred, ret):
    """RMSE and Pearson correlation per column; zero-variance columns give correlation 0 and a flag."""
    rmse = np.sqrt(np.mean((pred - ret) ** 2, axis=0))
    pc = pred - pred.mean(axis=0)
    rc = ret - ret.mean(axis=0)
    denom = np.sqrt((pc**2).sum(axis=0) * (rc**2).sum(axis=0))
    undefined = denom == 0.0
    corr = np.where(undefined, 0.0, (pc * rc).sum(axis=0) / np.where(undefined, 1.0, denom))
    return rmse, np.clip(corr, -1.0, 1.0), undefined


def prediction_accuracy(trajectories, predict, gamma, window=25, components=None, names=None):
    """Compare predictions against Monte-Carlo returns over each trajectory's last ``window`` steps.

    ``trajectories`` are ``envs.Episode`` objects; ``predict(obs, actions)`` returns
    one column per selected component for each step. ``components`` picks the
    reward columns to compare (default: all).
    """
    rmses, corrs, flags = [], [], []
    skipped = 0
    for ep in trajectories:
        n = len(ep)
        if n < window:
            skipped += 1
            continue
        rewards = ep.rewards if components is None else ep.rewards[:, components]
        ret = mc_component_returns(rewards, gamma).returns
        pred = np.asarray(predict(ep.observations[:n], ep.actions), dtype=np.float64).reshape(ret.shape)
        r, c, u = window_metrics(pred[-window:], ret[-window:])
        rmses.append(r)
        corrs.append(c)
        flags.append(u)
    width = len(names) if names else (np.asarray(components).size if components is not None else None)
    if not rmses:
        z = np.zeros(width or 0)
        return AccuracyReport(list(names or []), z, z.copy(), 0, skipped, z.astype(int))
    rmses, corrs, flags = map(np.array, (rmses, corrs, flags))
    names = list(names) if names else [str(i) for i in range(rmses.shape[1])]
    return AccuracyReport(
        names,
        np.array([iqm(rmses[:, i]) for i in range(rmses.shape[1])]),
        np.array([iqm(corrs[:, i]) for i in range(corrs.shape[1])]),
        rmses.shape[0],
        skipped,
        flags.sum(axis=0),
    )


# ---------------------------------------------------------------- tabular


def tabular_q(P, R, pi, gamma):
    """Exact Q^pi of a finite MDP by one linear solve.

    P: (S, A, S) transition probabilities; R: (S, A) or (S, A, m) rewards;
    pi: (S, A) action probabilities. Returns Q with R's shape.
    """
    S, A, _ = P.shape
    P_pi = np.einsum("xay,yb->xayb", P, pi).reshape(S * A, S * A)
    R_flat = R.reshape(S * A, -1)
    Q = np.linalg.solve(np.eye(S * A) - gamma * P_pi, R_flat)
    return Q.reshape(R.shape)


# ---------------------------------------------------------------- csv


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
