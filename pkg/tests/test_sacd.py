import numpy as np
import pytest

from sacd_cases import alpha_fd_error, critic_fd_error, penalized_components, policy_fd_error, random_batch, small_state
from valuedecomp.sacd import (
    DecomposedCritic,
    NonFiniteLossError,
    Variant,
    VariantConfig,
    alpha_loss,
    alpha_update,
    component_targets,
    compute_targets,
    critic_gradients,
    critic_loss,
    entropy_component_reward,
    naive_target_values,
    policy_loss,
    sac_scalar_target,
    select_target_network,
    selected_target_values,
    soft_update,
    update_step,
)
from valuedecomp.approximator import AdamState
from valuedecomp.shaping import ComponentSpec, ConstraintMode, Sign


# ---------------------------------------------------------------- targets


def test_entropy_reward_examples():
    assert np.all(entropy_component_reward([-1.0, 3.0], 0.0, 0.99) == 0.0)
    assert entropy_component_reward([-1.0], 0.2, 0.99)[0] == pytest.approx(0.198)
    assert entropy_component_reward([-1.0], 0.2, 0.99, literal_sign=True)[0] == pytest.approx(-0.198)
    assert entropy_component_reward([-1.0], 0.2, 0.99, terminated=[True])[0] == 0.0


def test_target_selection_examples():
    q1, q2 = np.array([[1.0, 2.0]]), np.array([[2.0, 0.0]])
    j = select_target_network(q1, q2, np.ones(2))
    assert j.tolist() == [1]  # second twin, 0-based
    assert select_target_network(q1, q1, np.ones(2)).tolist() == [0]
    naive = naive_target_values(q1, q2)
    assert naive.tolist() == [[1.0, 0.0]]
    assert naive.sum() < selected_target_values(q1, q2, j).sum()


def test_component_target_examples():
    y = component_targets(np.array([[1.0, -2.0]]), np.array([[10.0, 5.0]]), [False], 0.99)
    assert np.allclose(y, [[10.9, 2.95]])
    y = component_targets(np.array([[1.0, -2.0]]), np.array([[10.0, 5.0]]), [True], 0.99)
    assert y.tolist() == [[1.0, -2.0]]
    crash = ComponentSpec("crash", sign=Sign.NON_POSITIVE, modes={ConstraintMode.CLIP_TARGET})
    y = component_targets(np.array([[0.5, 0.5]]), np.zeros((1, 2)), [True], 0.99, [crash])
    assert y.tolist() == [[0.0, 0.5]]


def test_scaling_weights_keeps_selection(rng):
    q1, q2 = rng.normal(size=(200, 4)), rng.normal(size=(200, 4))
    w = rng.uniform(0.1, 2, size=4)
    assert np.array_equal(select_target_network(q1, q2, w), select_target_network(q1, q2, 7.5 * w))


def test_naive_never_exceeds_selected(rng):
    for _ in range(100):
        q1, q2 = rng.normal(size=(32, 3)), rng.normal(size=(32, 3))
        w = rng.uniform(0, 2, size=3)
        j = select_target_network(q1, q2, w)
        assert np.all(naive_target_values(q1, q2) @ w <= selected_target_values(q1, q2, j) @ w)


def test_composite_target_matches_scalar_sac_target(rng):
    state = small_state(3)
    batch = random_batch(rng)
    noise = rng.normal(size=(len(batch), 2))
    y, logp = compute_targets(state, batch, noise)
    from valuedecomp.policy import sample_with_cache

    a_next, _, _ = sample_with_cache(state.policy, batch.s_next, noise)
    w = state.weights()
    c1 = state.critic.q(batch.s_next, a_next, 0, use_target=True) @ w
    c2 = state.critic.q(batch.s_next, a_next, 1, use_target=True) @ w
    ref = sac_scalar_target(batch.r @ w[:-1], c1, c2, logp, state.alpha, 0.99, batch.terminated)
    assert np.max(np.abs(y @ w - ref)) < 1e-10


def test_all_zero_terminal_batch():
    state = small_state(0)
    rng = np.random.default_rng(0)
    batch = random_batch(rng)
    batch.r[:] = 0.0
    batch.terminated[:] = True
    y, _ = compute_targets(state, batch, rng.normal(size=(len(batch), 2)))
    assert np.all(y == 0.0)
    q = [state.critic.q(batch.s, batch.a, t) for t in range(2)]
    losses, _ = critic_loss(q, y)
    assert np.allclose(losses, sum(0.5 * (qq * qq).mean(axis=0) for qq in q))


# ---------------------------------------------------------------- losses


def test_critic_loss_examples():
    y = np.array([[1.0]])
    losses, _ = critic_loss([np.array([[3.0]]), np.array([[3.0]])], y)
    assert losses.tolist() == [4.0]
    losses, _ = critic_loss([y, y], y)
    assert losses.tolist() == [0.0]


def test_penalty_examples():
    comp = [ComponentSpec("crash", sign=Sign.NON_POSITIVE, modes={ConstraintMode.PENALTY})]
    losses, _ = critic_loss([np.array([[2.0]])], np.array([[2.0]]), comp)
    assert losses[0] == pytest.approx(1.0)
    losses, _ = critic_loss([np.array([[-2.0]])], np.array([[-2.0]]), comp)
    assert losses[0] == 0.0


def test_policy_loss_examples():
    state = small_state(1, m=1)
    s = np.zeros((4, 3))
    noise = np.zeros((4, 2))
    # make the two twins identical so min picks either
    state.critic.online[1] = state.critic.online[0].copy()
    w = np.array([1.0, 0.0])
    loss, _, _ = policy_loss(state.policy, state.critic, s, noise, 0.0, w)
    from valuedecomp.policy import sample_with_cache

    u, _, _ = sample_with_cache(state.policy, s, noise)
    assert loss == pytest.approx(-np.mean(state.critic.q(s, u, 0)[:, 0]))
    loss2, _, _ = policy_loss(state.policy, state.critic, s, noise, 0.0, 2 * w)
    assert loss2 == pytest.approx(2 * loss)


def test_alpha_update_direction():
    logp = np.full(10, 0.7)
    assert alpha_loss(0.3, logp, -0.7)[1] == 0.0
    new, _ = alpha_update(0.0, AdamState.zeros(1), np.full(10, 2.0), -1.0, 0.1)
    assert new > 0.0  # entropy below target: alpha rises
    new, _ = alpha_update(0.0, AdamState.zeros(1), np.full(10, -5.0), -1.0, 0.1)
    assert new < 0.0 and np.exp(new) > 0


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    assert critic_fd_error(rng) < 1e-4
    assert critic_fd_error(rng, penalized_components()) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_policy_gradient_matches_finite_differences(seed):
    assert policy_fd_error(np.random.default_rng(seed)) < 1e-4


def test_alpha_gradient_matches_finite_differences(rng):
    for _ in range(20):
        assert alpha_fd_error(rng) < 1e-4


def test_hidden_division_touches_trunk_only(rng):
    critic = DecomposedCritic.create(3, 2, 3, (6, 5), (1, 2))
    s, a, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    plain = critic_gradients(critic, s, a, y).combined[0]
    divided = critic_gradients(critic, s, a, y, division=True).combined[0]
    trunk = critic.spec.trunk_mask()
    assert np.allclose(divided[trunk], plain[trunk] / 3)
    assert np.array_equal(divided[~trunk], plain[~trunk])


def test_targets_carry_no_gradient(rng):
    state = small_state(2)
    batch = random_batch(rng)
    noise = rng.normal(size=(len(batch), 2))
    y, _ = compute_targets(state, batch, noise)
    g = critic_gradients(state.critic, batch.s, batch.a, y).combined
    state.critic.target[0] = state.critic.target[0] + 1.0
    y2, _ = compute_targets(state, batch, noise)
    assert not np.allclose(y, y2)
    g2 = critic_gradients(state.critic, batch.s, batch.a, y).combined
    assert all(np.array_equal(a, b) for a, b in zip(g, g2))


# ---------------------------------------------------------------- update step


def test_full_ema_copies_online(rng):
    state = small_state(0, target_update_rate=1.0)
    state, _ = update_step(state, random_batch(rng), rng)
    for twin in range(2):
        assert np.array_equal(state.critic.target[twin], state.critic.online[twin])


def test_ema_contraction(rng):
    theta, target = rng.normal(size=20), rng.normal(size=20)
    d0 = np.linalg.norm(target - theta)
    for _ in range(7):
        target = soft_update(target, theta, 0.05)
    assert np.linalg.norm(target - theta) == pytest.approx(d0 * 0.95**7, rel=1e-12)


@pytest.mark.parametrize("variant", list(Variant))
def test_update_step_runs_for_every_variant(variant, rng):
    state = small_state(0, variant=variant)
    state, metrics = update_step(state, random_batch(rng), rng)
    assert state.step == 1
    assert metrics.critic_losses.shape == (len(state.head_names),)
    assert (metrics.cagrad_weights is not None) == (variant is Variant.CAGRAD)


def test_non_finite_loss_names_component(rng):
    state = small_state(0)
    batch = random_batch(rng)
    batch.r[0, 1] = np.inf
    with pytest.raises(NonFiniteLossError, match="c1"):
        update_step(state, batch, rng)


def test_config_validation():
    with pytest.raises(ValueError):
        VariantConfig(gamma=1.0)
    with pytest.raises(ValueError):
        VariantConfig(initial_alpha=0.0)
    with pytest.raises(ValueError):
        VariantConfig(variant="bogus")
