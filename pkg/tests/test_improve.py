import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_diff, rel_err
from helpers import random_episode
from imel import nn
from imel.errors import AnnotationError, ConfigError, NoImprovementDirection
from imel.improve import (ImproveConfig, ValueNet, advantages, aggregate_sigma, annotate_episode, fit_value,
                          improved_mean, improved_sigma, mc_returns, step_size_eta)
from imel.memory import Episode
from imel.policy import kl_equal_sigma
from oracles import gae_brute, returns_brute


class ConstValue:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, states):
        return self.values


def test_returns_examples():
    r = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(mc_returns(r, 0.0), r)
    np.testing.assert_array_equal(mc_returns(np.ones(3), 1.0), [3.0, 2.0, 1.0])
    np.testing.assert_allclose(mc_returns(r, 0.5, literal=True), 0.5 * mc_returns(r, 0.5))


def test_returns_match_brute_force(rng):
    r = rng.normal(size=40)
    np.testing.assert_allclose(mc_returns(r, 0.9), returns_brute(r, 0.9), rtol=1e-12, atol=1e-12)


@settings(max_examples=200)
@given(st.integers(1, 6), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2 ** 31))
def test_advantage_oracles(T, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=T), rng.normal(size=T)
    states = np.zeros((T, 1))
    q = mc_returns(r, gamma)
    assert np.max(np.abs(q - returns_brute(r, gamma))) < 1e-12
    cfg = ImproveConfig(gamma=gamma, lam=lam, use_gae=True)
    assert np.max(np.abs(advantages(states, r, ConstValue(v), cfg) - gae_brute(r, v, gamma, lam))) < 1e-12
    plain = advantages(states, r, ConstValue(v), ImproveConfig(gamma=gamma, use_gae=False))
    np.testing.assert_array_equal(plain, q - v)


def test_gae_limits(rng):
    r, v = rng.normal(size=30), rng.normal(size=30)
    s = np.zeros((30, 1))
    one = advantages(s, r, ConstValue(v), ImproveConfig(gamma=0.97, lam=1.0))
    assert np.max(np.abs(one - (mc_returns(r, 0.97) - v))) < 1e-10
    zero = advantages(s, r, ConstValue(v), ImproveConfig(gamma=0.97, lam=0.0))
    td = r + 0.97 * np.append(v[1:], 0.0) - v
    np.testing.assert_allclose(zero, td, rtol=0, atol=1e-15)


def test_config_ranges():
    with pytest.raises(ConfigError):
        ImproveConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        ImproveConfig(epsilon=0.0)


def test_eta_substitution():
    assert step_size_eta([1.0], [[1.0]], [[0.0]], [[1.0]], 0.5) == pytest.approx(1.0, rel=1e-15)


def test_eta_scales_inversely_with_advantage(rng):
    a, mu = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    adv = rng.normal(size=8)
    e1 = step_size_eta(adv, a, mu, 0.4, 0.05)
    e2 = step_size_eta(2 * adv, a, mu, 0.4, 0.05)
    assert e2 == pytest.approx(e1 / 2, rel=1e-14)


def test_eta_no_direction():
    with pytest.raises(NoImprovementDirection):
        step_size_eta(np.zeros(3), np.ones((3, 1)), np.zeros((3, 1)), 1.0, 0.1)
    with pytest.raises(NoImprovementDirection):
        step_size_eta(np.ones(3), np.ones((3, 1)), np.ones((3, 1)), 1.0, 0.1)


@settings(max_examples=100)
@given(st.integers(1, 64), st.integers(1, 6), st.floats(1e-3, 1.0), st.integers(0, 2 ** 31))
def test_kl_budget_exact(T, da, eps, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(T, da))
    sd = rng.uniform(0.1, 2.0, size=(T, da))
    a = mu + sd * rng.standard_normal((T, da))
    adv = rng.normal(size=T)
    eta = step_size_eta(adv, a, mu, sd, eps)
    mu_star = improved_mean(mu, sd, a, adv, eta)
    assert abs(np.mean(kl_equal_sigma(mu_star, mu, sd)) - eps) / eps < 1e-9
    # improvement moves toward positive-advantage actions
    np.testing.assert_array_equal(np.sign(mu_star - mu), np.sign(adv[:, None] * (a - mu)))


def test_improved_mean_examples():
    np.testing.assert_array_equal(improved_mean([[0.0]], [[1.0]], [[1.0]], [2.0], 0.5), [[1.0]])
    np.testing.assert_array_equal(improved_mean([[0.3]], [[1.0]], [[0.9]], [0.0], 0.5), [[0.3]])
    np.testing.assert_array_equal(improved_mean([[0.3]], [[1.0]], [[0.3]], [5.0], 0.5), [[0.3]])


def test_improved_mean_equivariance(rng):
    mu, a = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    sd, adv, eta, shift, c = rng.uniform(0.2, 1, (4, 2)), rng.normal(size=4), 0.3, 1.7, 2.5
    base = improved_mean(mu, sd, a, adv, eta)
    np.testing.assert_allclose(improved_mean(mu + shift, sd, a + shift, adv, eta), base + shift, rtol=1e-12)
    np.testing.assert_allclose(improved_mean(c * mu, c * sd, c * a, adv, c * c * eta), c * base, rtol=1e-12)


def test_sigma_update():
    assert improved_sigma(1.0, 0.0, 1.0, 0.7) == 1.0
    assert improved_sigma(1.0, 0.0, 2.0, 0.5) == 2.5
    np.testing.assert_array_equal(aggregate_sigma(np.full((5, 2), 0.4), 0.1), [0.4, 0.4])
    np.testing.assert_array_equal(aggregate_sigma(np.array([[-0.2], [0.1]]), 0.1), [0.1])


def test_annotate_episode(rng):
    ep = random_episode(rng, T=20, ds=3, da=2, annotate=False)
    cfg = ImproveConfig(epsilon=0.03)
    ep, eta = annotate_episode(ep, ConstValue(np.zeros(20)), cfg)
    assert eta > 0 and ep.eta == eta
    assert abs(np.mean(kl_equal_sigma(ep.improved_means, ep.means, ep.stds)) - 0.03) < 1e-9 * 0.03
    with pytest.raises(AnnotationError):
        annotate_episode(ep, None, cfg)


def test_annotate_without_direction_keeps_means(rng):
    ep = random_episode(rng, T=6, annotate=False)
    zero = Episode(ep.states, ep.actions, ep.means, ep.stds, np.zeros(6))
    zero, eta = annotate_episode(zero, ConstValue(np.zeros(6)), ImproveConfig())
    assert eta == 0.0
    np.testing.assert_array_equal(zero.improved_means, zero.means)


def test_value_net_gradient(rng):
    vn = ValueNet.create(3, (8, 8), seed=0)
    vn = ValueNet(vn.params, shift=0.4, scale=2.0)
    s, q = rng.normal(size=(10, 3)), rng.normal(size=10)
    loss, g = vn.loss_and_grad(s, q)
    fd = central_diff(lambda v: ValueNet(vn.params.replace(v), 0.4, 2.0).loss_and_grad(s, q)[0], vn.params.values)
    assert rel_err(g, fd) < 1e-6


def test_recentring_preserves_function(rng):
    vn = ValueNet.create(2, (8,), seed=1)
    s = rng.normal(size=(12, 2))
    moved = vn.recentred(rng.normal(50.0, 20.0, size=12))
    np.testing.assert_allclose(moved(s), vn(s), rtol=1e-12, atol=1e-12)


def test_fit_value():
    rng = np.random.default_rng(0)
    vn = ValueNet.create(1, seed=0)
    opt = nn.OptimizerState.create(vn.params.size, 1e-2)
    same, opt0, losses = fit_value(vn, np.zeros((5, 1)), np.ones(5), 0, opt)
    assert same is vn and losses == []
    const, _, losses = fit_value(vn, rng.normal(size=(20, 1)), np.full(20, 3.0), 1000, opt)
    assert losses[-1] < 1e-5 * losses[0]
    # smooth 1-d target: 200 epochs bring MSE under 10% of the target variance
    x = np.linspace(-2, 2, 50)[:, None]
    y = np.sin(2 * x[:, 0]) + 0.5 * x[:, 0]
    fitted, _, losses = fit_value(vn, x, y, 200, nn.OptimizerState.create(vn.params.size, 1e-2))
    assert losses[-1] <= losses[0]
    assert losses[-1] < 0.1 * np.var(y)
