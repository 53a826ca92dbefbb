import numpy as np
import pytest

from conftest import central_difference, rel_error
from valuedecomp.approximator import unpack
from valuedecomp.policy import (
    PolicyNetwork,
    deterministic_action,
    heads,
    log1m_tanh_sq,
    sample_action,
    sample_backward,
    sample_with_cache,
)


def zero_policy(obs_dim=2, action_dim=1, mu_bias=0.0, log_std_bias=0.0):
    pol = PolicyNetwork.create(obs_dim, action_dim, (4,), seed=0)
    pol.params = np.zeros_like(pol.params)
    (_, _), (_, b) = unpack(pol.params, pol.spec)
    b[:action_dim] = mu_bias
    b[action_dim:] = log_std_bias
    return pol


def test_mode_density():
    a, logp = sample_action(zero_policy(), np.zeros(2), np.zeros(1))
    assert a[0] == 0.0
    assert logp == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)


def test_zero_noise_gives_tanh_mean_and_matches_deterministic(rng):
    pol = PolicyNetwork.create(3, 2, (8,), seed=4)
    s = rng.normal(size=3)
    mu = heads(pol, s)[0][0]
    a, _ = sample_action(pol, s, np.zeros(2))
    assert np.array_equal(a, np.tanh(mu))
    assert np.array_equal(a, deterministic_action(pol, s))


def test_deterministic_saturation():
    assert deterministic_action(zero_policy(mu_bias=12.0), np.zeros(2))[0] == pytest.approx(1.0, abs=1e-8)
    assert deterministic_action(zero_policy(), np.zeros(2))[0] == 0.0


def test_actions_stay_in_open_interval(rng):
    pol = zero_policy(mu_bias=3.0, log_std_bias=1.0)
    a, logp = sample_action(pol, np.zeros((1000, 2)), rng.normal(size=(1000, 1)) * 5)
    assert np.all(np.abs(a) <= 1.0)
    assert np.all(np.isfinite(logp))


def test_stable_tanh_correction():
    z = np.array([-30.0, -5.0, 0.0, 0.3, 5.0, 30.0])
    naive = np.log(1 - np.tanh(z[1:5]) ** 2)
    assert np.allclose(log1m_tanh_sq(z)[1:5], naive, atol=1e-10)
    assert np.all(np.isfinite(log1m_tanh_sq(z)))


def test_logp_decreases_with_noise_magnitude():
    pol = zero_policy(mu_bias=0.0, log_std_bias=-0.5)
    eps = np.linspace(0, 4, 40)
    logps = [sample_action(pol, np.zeros(2), np.array([e]))[1] for e in eps]
    assert np.all(np.diff(logps) < 0)


def test_monte_carlo_mean_matches_tanh_gaussian():
    mu, log_std = 0.4, -0.3
    pol = zero_policy(mu_bias=mu, log_std_bias=log_std)
    rng = np.random.default_rng(1)
    n = 100_000
    a, _ = sample_action(pol, np.zeros((n, 2)), rng.normal(size=(n, 1)))
    raw = np.tanh(mu + np.exp(log_std) * np.random.default_rng(2).normal(size=1_000_000))
    se = np.sqrt(a.var() / n + raw.var() / raw.size)
    assert abs(a.mean() - raw.mean()) < 3 * se


def test_density_integrates_to_one():
    # change of variables: integrate exp(logp) over a in (-1, 1)
    pol = zero_policy(mu_bias=0.2, log_std_bias=-0.4)
    std = np.exp(-0.4)
    z = np.linspace(-8, 8, 20001)
    eps = (z - 0.2) / std
    a, logp = sample_action(pol, np.zeros((z.size, 2)), eps[:, None])
    order = np.argsort(a[:, 0])
    assert np.trapezoid(np.exp(logp[order]), a[order, 0]) == pytest.approx(1.0, abs=1e-3)


def test_policy_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        pol = PolicyNetwork.create(3, 2, (6, 6), seed=int(rng.integers(1000)))
        pol.params = pol.params + rng.normal(scale=0.2, size=pol.params.size)
        s = rng.normal(size=(4, 3))
        noise = rng.normal(size=(4, 2))
        ga = rng.normal(size=(4, 2))
        gl = rng.normal(size=4)
        _, _, cache = sample_with_cache(pol, s, noise)
        g = sample_backward(pol, cache, ga, gl)

        def f(p):
            q = PolicyNetwork(pol.spec, p)
            a, lp = sample_action(q, s, noise)
            return np.sum(ga * a) + np.sum(gl * lp)

        worst = max(worst, rel_error(g, central_difference(f, pol.params)))
    assert worst < 1e-4


def test_clamped_log_std_has_no_gradient():
    pol = zero_policy(log_std_bias=5.0)  # above the upper clamp
    _, _, cache = sample_with_cache(pol, np.ones((3, 2)), np.ones((3, 1)))
    g = sample_backward(pol, cache, np.zeros((3, 1)), np.ones(3))
    (_, _), (gW, gb) = unpack(g, pol.spec)
    assert gb[1] == 0.0 and not gW[:, 1].any()
