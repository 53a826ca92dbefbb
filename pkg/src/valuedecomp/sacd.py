"""SAC and its value-decomposed variants.

The critic has one output per reward component plus a final entropy head.
Variants differ in how the bootstrap target is chosen and how the
per-component critic gradients are combined:

``SAC``            single scalar head, standard soft target.
``SAC-D-NAIVE``    element-wise twin minimum per component.
``SAC-D``          all heads of the twin whose weighted composite is smaller.
``SAC-D-CAGRAD``   as SAC-D, gradients combined with CAGrad.

Twin indices are 0-based throughout.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import gradsurgery
from .approximator import AdamState, MlpSpec, adam_step, backward_cache, forward_cache, mlp_init
from .policy import PolicyNetwork, sample_backward, sample_with_cache
from .shaping import clip_target, sign_penalty, sign_penalty_grad, weight_vector


class Variant(str, Enum):
    SAC = "SAC"
    NAIVE = "SAC-D-NAIVE"
    SACD = "SAC-D"
    CAGRAD = "SAC-D-CAGRAD"

    @property
    def decomposed(self):
        return self is not Variant.SAC


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component, step=None):
        where = f" at gradient step {step}" if step is not None else ""
        super().__init__(f"non-finite loss for component {component!r}{where}")
        self.component = component
        self.step = step


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant = Variant.SACD
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 256
    target_update_rate: float = 5e-3
    target_entropy: float = None
    learn_alpha: bool = True
    initial_alpha: float = 1.0
    cagrad_c: float = 0.5
    cagrad_iters: int = 200
    cagrad_step: float = 0.1
    original_cagrad_direction: bool = False
    hidden_grad_division: bool = True
    flip_entropy_sign: bool = False
    hidden_sizes: tuple = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.target_update_rate <= 1.0:
            raise ValueError("target_update_rate must lie in (0, 1]")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.initial_alpha <= 0:
            raise ValueError("initial_alpha must be positive")


class DecomposedCritic:
    """Twin multi-head Q-networks over ``(s, a)`` with their target copies."""

    def __init__(self, spec, online, target=None):
        self.spec = spec
        self.online = [np.array(p, dtype=np.float64) for p in online]
        self.target = [p.copy() for p in (target if target is not None else self.online)]

    @classmethod
    def create(cls, obs_dim, action_dim, n_heads, hidden_sizes=(256, 256), seeds=(0, 1)):
        spec = MlpSpec(obs_dim + action_dim, n_heads, hidden_sizes)
        return cls(spec, [mlp_init(spec, s) for s in seeds])

    @property
    def n_heads(self):
        return self.spec.output_dim

    def copy(self):
        return DecomposedCritic(self.spec, [p.copy() for p in self.online], [p.copy() for p in self.target])

    def q(self, s, a, twin, use_target=False):
        params = (self.target if use_target else self.online)[twin]
        return forward_cache(params, self.spec, _concat(s, a))[0]


def _concat(s, a):
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return np.concatenate([s, a], axis=1)


# ---------------------------------------------------------------- target side


def entropy_component_reward(logp_next, alpha, gamma, terminated=None, literal_sign=False):
    """Entropy reward for the extra head: ``-gamma * alpha * log pi(a'|s')``.

    Terminal rows get zero, matching a soft target that does not bootstrap past
    termination. ``literal_sign=True`` flips the sign to ``+gamma * alpha * log pi``.
    """
    r = (1.0 if literal_sign else -1.0) * gamma * alpha * np.asarray(logp_next, dtype=np.float64)
    if terminated is not None:
        r = r * (1.0 - np.asarray(terminated, dtype=np.float64))
    return r


def composite(q, w):
    return np.asarray(q) @ np.asarray(w)


def select_target_network(q_next_1, q_next_2, w):
    """Per row, 0 if the first twin's weighted composite is <= the second's, else 1."""
    return (composite(q_next_2, w) < composite(q_next_1, w)).astype(np.intp)


def selected_target_values(q_next_1, q_next_2, j):
    return np.where(np.asarray(j)[:, None] == 0, q_next_1, q_next_2)


def naive_target_values(q_next_1, q_next_2):
    return np.minimum(q_next_1, q_next_2)


def component_targets(rewards, q_next, terminated, gamma, components=None):
    """``y_i = r_i + gamma (1 - terminated) Q_i(s', a')`` with optional sign clipping.

    ``rewards`` and ``q_next`` have shape (batch, heads); ``components`` lists the
    ComponentSpec of the environmental heads (the trailing entropy head is never clipped).
    """
    mask = 1.0 - np.asarray(terminated, dtype=np.float64)[:, None]
    y = np.asarray(rewards, dtype=np.float64) + gamma * mask * np.asarray(q_next, dtype=np.float64)
    for i, comp in enumerate(components or ()):
        if comp.clips_target:
            y[:, i] = clip_target(comp.sign, y[:, i])
    return y


def sac_scalar_target(scalar_reward, composite_next_1, composite_next_2, logp_next, alpha, gamma, terminated):
    """Reference soft target ``r + gamma (1 - d) (min_j Q_j(s', a') - alpha log pi(a'|s'))``."""
    mask = 1.0 - np.asarray(terminated, dtype=np.float64)
    soft = np.minimum(composite_next_1, composite_next_2) - alpha * np.asarray(logp_next)
    return np.asarray(scalar_reward) + gamma * mask * soft


# ---------------------------------------------------------------- losses


def _penalty_terms(q, components):
    pen = np.zeros_like(q)
    dpen = np.zeros_like(q)
    for i, comp in enumerate(components or ()):
        if comp.penalized:
            pen[:, i] = sign_penalty(comp.sign, q[:, i])
            dpen[:, i] = sign_penalty_grad(comp.sign, q[:, i])
    return pen, dpen


def critic_loss(q_twins, y, components=None):
    """Per-head losses averaged over the batch and summed over the twins.

    Returns ``(losses, dloss_dq)`` where ``dloss_dq[j]`` is the derivative of
    each head's loss with respect to twin j's predictions (already divided by
    the batch size).
    """
    batch = y.shape[0]
    losses = np.zeros(y.shape[1])
    dq = []
    for q in q_twins:
        err = q - y
        pen, dpen = _penalty_terms(q, components)
        losses += (0.5 * err * err + pen).sum(axis=0) / batch
        dq.append((err + dpen) / batch)
    return losses, dq


@dataclass
class CriticGradients:
    losses: np.ndarray
    per_head: list = None  # per head, list of twin gradients
    combined: list = None  # per twin, combined gradient


def critic_gradients(critic, s, a, y, components=None, per_head=False, division=False):
    """Critic losses and either per-head gradients or the gradient of their mean."""
    x = _concat(s, a)
    caches = [forward_cache(p, critic.spec, x) for p in critic.online]
    losses, dq = critic_loss([c[0] for c in caches], y, components)
    k = critic.n_heads
    out = CriticGradients(losses)
    if not np.all(np.isfinite(losses)):
        return out  # the caller reports the offending head; no gradient is taken
    if per_head:
        out.per_head = []
        for i in range(k):
            grads = []
            for p, (_, inputs, pre), d in zip(critic.online, caches, dq):
                up = np.zeros_like(d)
                up[:, i] = d[:, i]
                grads.append(backward_cache(p, critic.spec, inputs, pre, up, need_input_grad=False)[0])
            out.per_head.append(grads)
    else:
        out.combined = []
        trunk = critic.spec.trunk_mask() if division else None
        for p, (_, inputs, pre), d in zip(critic.online, caches, dq):
            g = backward_cache(p, critic.spec, inputs, pre, d / k, need_input_grad=False)[0]
            if division:
                g[trunk] /= k
            out.combined.append(g)
    return out


def critic_action_gradients(critic, s, u, upstream, twin):
    """Gradient of ``sum(upstream * Q(s, u; twin))`` with respect to the action ``u``."""
    x = _concat(s, u)
    _, inputs, pre = forward_cache(critic.online[twin], critic.spec, x)
    _, gx = backward_cache(critic.online[twin], critic.spec, inputs, pre, upstream)
    return gx[:, -u.shape[1]:]


def policy_loss(policy, critic, s, noise, alpha, w):
    """``mean(alpha log pi(u|s) - min_j sum_i w_i Q_i(s, u; theta_j))`` and its policy gradient."""
    u, logp, cache = sample_with_cache(policy, np.atleast_2d(s), noise)
    x = _concat(s, u)
    batch = x.shape[0]
    caches = [forward_cache(p, critic.spec, x) for p in critic.online]
    comps = np.stack([composite(c[0], w) for c in caches])
    j = (comps[1] < comps[0]).astype(np.intp)
    q_min = comps[j, np.arange(batch)]
    loss = float(np.mean(alpha * logp - q_min))
    grad_u = np.zeros_like(u)
    for twin, (p, (_, inputs, pre)) in enumerate(zip(critic.online, caches)):
        rows = j == twin
        if not rows.any():
            continue
        up = np.zeros((batch, critic.n_heads))
        up[rows] = w
        _, gx = backward_cache(p, critic.spec, inputs, pre, up)
        grad_u -= gx[:, -u.shape[1]:]
    grad = sample_backward(policy, cache, grad_u / batch, np.full(batch, alpha / batch))
    return loss, grad, logp


def alpha_loss(log_alpha, logp, target_entropy):
    """``-alpha * mean(log pi + target_entropy)`` and its derivative in ``log alpha``."""
    alpha = np.exp(log_alpha)
    loss = float(-alpha * np.mean(np.asarray(logp) + target_entropy))
    return loss, loss


def alpha_update(log_alpha, state, logp, target_entropy, lr):
    _, g = alpha_loss(log_alpha, logp, target_entropy)
    new, state = adam_step(np.array([log_alpha]), np.array([g]), state, lr)
    return float(new[0]), state


# ---------------------------------------------------------------- trainer state


@dataclass
class StepMetrics:
    step: int
    critic_losses: np.ndarray
    policy_loss: float
    alpha: float
    alpha_loss: float
    critic_grad_norm: float
    policy_grad_norm: float
    mean_logp: float
    weights: np.ndarray
    cagrad_weights: np.ndarray = None


@dataclass
class TrainerState:
    config: VariantConfig
    components: list
    critic: DecomposedCritic
    policy: PolicyNetwork
    critic_opt: list
    policy_opt: AdamState
    log_alpha: float
    alpha_opt: AdamState
    step: int = 0
    head_names: tuple = field(default=())

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    @property
    def target_entropy(self):
        te = self.config.target_entropy
        return -float(self.policy.action_dim) if te is None else float(te)

    def weights(self, step=None):
        step = self.step if step is None else step
        return weight_vector(self.components, step, with_entropy=self.config.variant.decomposed)


def make_trainer_state(config, components, obs_dim, action_dim, seed_seq):
    """Fresh networks and optimizers; ``seed_seq`` is a numpy SeedSequence."""
    critic_seeds, policy_seed = seed_seq.spawn(2)
    c1, c2 = (int(s.generate_state(1)[0]) for s in critic_seeds.spawn(2))
    n_heads = len(components) + 1 if config.variant.decomposed else 1
    critic = DecomposedCritic.create(obs_dim, action_dim, n_heads, config.hidden_sizes, (c1, c2))
    policy = PolicyNetwork.create(obs_dim, action_dim, config.hidden_sizes, int(policy_seed.generate_state(1)[0]))
    names = tuple(c.name for c in components)
    return TrainerState(
        config=config,
        components=list(components),
        critic=critic,
        policy=policy,
        critic_opt=[AdamState.zeros(critic.spec.n_params) for _ in range(2)],
        policy_opt=AdamState.zeros(policy.spec.n_params),
        log_alpha=float(np.log(config.initial_alpha)),
        alpha_opt=AdamState.zeros(1),
        head_names=names + ("entropy",) if config.variant.decomposed else ("composite",),
    )


def soft_update(target, online, rate):
    return (1.0 - rate) * target + rate * online


def compute_targets(state, batch, noise_next):
    """Bootstrap targets y, shape (batch, heads), plus the sampled next-state log-density."""
    cfg = state.config
    critic, policy = state.critic, state.policy
    a_next, logp_next, _ = sample_with_cache(policy, batch.s_next, noise_next)
    q1 = critic.q(batch.s_next, a_next, 0, use_target=True)
    q2 = critic.q(batch.s_next, a_next, 1, use_target=True)
    alpha = state.alpha
    w = state.weights()
    if not cfg.variant.decomposed:
        scalar_r = batch.r @ w
        y = sac_scalar_target(scalar_r, q1[:, 0], q2[:, 0], logp_next, alpha, cfg.gamma, batch.terminated)
        return y[:, None], logp_next
    r_ent = entropy_component_reward(logp_next, alpha, cfg.gamma, batch.terminated, cfg.flip_entropy_sign)
    rewards = np.concatenate([batch.r, r_ent[:, None]], axis=1)
    if cfg.variant is Variant.NAIVE:
        q_next = naive_target_values(q1, q2)
    else:
        q_next = selected_target_values(q1, q2, select_target_network(q1, q2, w))
    return component_targets(rewards, q_next, batch.terminated, cfg.gamma, state.components), logp_next


def update_step(state, batch, rng):
    """One gradient step on critics, policy and temperature, then the target EMA.

    ``rng`` supplies the policy noise for the next-state and current-state samples.
    Mutates and returns ``state`` together with the step's metrics.
    """
    cfg = state.config
    n, d = len(batch), state.policy.action_dim
    noise_next = rng.standard_normal((n, d))
    noise_now = rng.standard_normal((n, d))
    alpha = state.alpha
    w = state.weights()
    w_heads = w if cfg.variant.decomposed else np.ones(1)

    y, _ = compute_targets(state, batch, noise_next)
    cagrad_w = None
    if cfg.variant is Variant.CAGRAD:
        cg = critic_gradients(state.critic, batch.s, batch.a, y, state.components, per_head=True)
        _check_losses(state, cg.losses)
        heads = gradsurgery.HeadGradients([np.concatenate(g) for g in cg.per_head])
        cagrad_w = gradsurgery.cagrad_weights(heads, cfg.cagrad_c, gradsurgery.SolverConfig(cfg.cagrad_iters, cfg.cagrad_step))
        direction = gradsurgery.cagrad_direction(heads, cagrad_w, cfg.original_cagrad_direction, cfg.cagrad_c)
        n_p = state.critic.spec.n_params
        critic_grads = [direction[:n_p], direction[n_p:]]
    else:
        division = cfg.hidden_grad_division and cfg.variant in (Variant.NAIVE, Variant.SACD)
        cg = critic_gradients(state.critic, batch.s, batch.a, y, state.components, division=division)
        _check_losses(state, cg.losses)
        critic_grads = cg.combined

    p_loss, p_grad, logp = policy_loss(state.policy, state.critic, batch.s, noise_now, alpha, w_heads)
    if not np.isfinite(p_loss):
        raise NonFiniteLossError("policy", state.step)
    a_loss, a_grad = alpha_loss(state.log_alpha, logp, state.target_entropy)

    critic = state.critic
    for twin in range(2):
        critic.online[twin], state.critic_opt[twin] = adam_step(
            critic.online[twin], critic_grads[twin], state.critic_opt[twin], cfg.lr_critic
        )
    state.policy.params, state.policy_opt = adam_step(state.policy.params, p_grad, state.policy_opt, cfg.lr_actor)
    if cfg.learn_alpha:
        new, state.alpha_opt = adam_step(np.array([state.log_alpha]), np.array([a_grad]), state.alpha_opt, cfg.lr_actor)
        state.log_alpha = float(new[0])
    for twin in range(2):
        critic.target[twin] = soft_update(critic.target[twin], critic.online[twin], cfg.target_update_rate)

    metrics = StepMetrics(
        step=state.step,
        critic_losses=cg.losses,
        policy_loss=p_loss,
        alpha=alpha,
        alpha_loss=a_loss,
        critic_grad_norm=float(np.sqrt(sum(g @ g for g in critic_grads))),
        policy_grad_norm=float(np.linalg.norm(p_grad)),
        mean_logp=float(np.mean(logp)),
        weights=w,
        cagrad_weights=cagrad_w,
    )
    state.step += 1
    return state, metrics


def _check_losses(state, losses):
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise NonFiniteLossError(state.head_names[bad[0]], state.step)
