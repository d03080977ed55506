import numpy as np
import pytest
from scipy import integrate

from conftest import central_diff, rel_err
from imel import nn
from imel.neural_process import NpModel, decode, elbo_loss, encode, gaussian_nll, np_predict
from imel.policy import gaussian_kl


@pytest.fixture
def model():
    return NpModel.create(3, 2, r_dim=6, z_dim=4, hidden=(8, 8), seed=0)


def _context(rng, n=7, dx=3, dy=2):
    return rng.normal(size=(n, dx)), rng.normal(size=(n, dy))


def test_encode_permutation_and_duplication_invariance(model, rng):
    for _ in range(50):
        cx, cy = _context(rng, int(rng.integers(1, 30)))
        base = encode(model, cx, cy)
        perm = rng.permutation(len(cx))
        p = encode(model, cx[perm], cy[perm])
        d = encode(model, np.concatenate([cx, cx]), np.concatenate([cy, cy]))
        for other in (p, d):
            assert np.array_equal(other.mean, base.mean) and np.array_equal(other.std, base.std)


def test_single_point_context_uses_its_representation(model, rng):
    cx, cy = _context(rng, 1)
    r = nn.forward(model.encoder, np.concatenate([cx[0], cy[0]]))
    out = nn.forward(model.latent, r)
    post = encode(model, cx, cy)
    np.testing.assert_array_equal(post.mean, out[:4])
    np.testing.assert_allclose(post.std, 1e-3 + np.log1p(np.exp(out[4:])), rtol=1e-14)


def test_encode_empty_context(model):
    with pytest.raises(ValueError):
        encode(model, np.zeros((0, 3)), np.zeros((0, 2)))


def test_decode_matches_hand_unrolled(model, rng):
    z, x = rng.normal(size=4), rng.normal(size=3)
    h = np.concatenate([z, x])
    for (w, b), act in zip(model.decoder.layers(), model.decoder.activations):
        h = w @ h + b
        h = np.tanh(h) if act == "tanh" else h
    stats = decode(model, z, x)
    np.testing.assert_allclose(stats.mean, h[:2], rtol=1e-13)
    np.testing.assert_allclose(stats.std, 1e-2 + np.log1p(np.exp(h[2:])), rtol=1e-13)
    again = decode(model, z, x)
    np.testing.assert_array_equal(again.mean, stats.mean)
    big = decode(model, 50 * rng.normal(size=4), 50 * rng.normal(size=(20, 3)))
    assert np.all(big.std > 0)


def test_nll_closed_form():
    y = np.array([[0.3, -1.2]])
    assert gaussian_nll(y, y, np.ones_like(y)) == pytest.approx(np.log(2 * np.pi), rel=1e-15)


def test_kl_zero_for_duplicated_targets(model, rng):
    cx, cy = _context(rng, 5)
    _, _, (_, kl) = elbo_loss(model, cx, cy, cx, cy, rng.normal(size=4))
    assert kl == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_elbo_gradient(seed):
    rng = np.random.default_rng(seed)
    m = NpModel.create(2, 1, r_dim=5, z_dim=3, hidden=(6, 6), seed=seed)
    cx, cy = _context(rng, 4, 2, 1)
    tx, ty = _context(rng, 3, 2, 1)
    xi = rng.normal(size=3)
    loss, grad, _ = elbo_loss(m, cx, cy, tx, ty, xi)
    fd = central_diff(lambda v: elbo_loss(m.with_flat(v), cx, cy, tx, ty, xi)[0], m.flat())
    assert rel_err(grad, fd) < 1e-4


def test_closed_form_latent_kl_matches_quadrature(rng):
    for _ in range(10):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.3, 2.0, size=2)

        def integrand(z):
            lp = -0.5 * ((z - m1) / s1) ** 2 - np.log(s1)
            lq = -0.5 * ((z - m2) / s2) ** 2 - np.log(s2)
            return np.exp(lp) / np.sqrt(2 * np.pi) * (lp - lq)

        quad, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12)
        assert abs(quad - gaussian_kl(np.array([m1]), np.array([s1]), np.array([m2]), np.array([s2]))) < 1e-6


def test_predict_modes(model, rng):
    cx, cy = _context(rng, 6)
    x = rng.normal(size=3)
    a = np_predict(model, x, cx, cy)
    b = np_predict(model, x, cx, cy)
    np.testing.assert_array_equal(a.mean, b.mean)
    s1 = np_predict(model, x, cx, cy, "sample", np.random.default_rng(3))
    s2 = np_predict(model, x, cx, cy, "sample", np.random.default_rng(3))
    np.testing.assert_array_equal(s1.mean, s2.mean)
    with pytest.raises(ValueError):
        np_predict(model, x, cx, cy, "sample")


def _sinusoid_task(rng):
    # context from a random 2-wide window, targets over the whole domain, so
    # the model sees targets both near and far from its context
    amp, phase = rng.uniform(0.5, 2.0), rng.uniform(0, np.pi)
    lo = rng.uniform(-3, 1)
    cx = rng.uniform(lo, lo + 2, size=(int(rng.integers(3, 12)), 1))
    tx = rng.uniform(-3, 3, size=(15, 1))
    return cx, amp * np.sin(cx + phase), tx, amp * np.sin(tx + phase)


def _heldout_nll(model, tasks):
    total = 0.0
    for cx, cy, tx, ty in tasks:
        stats = np_predict(model, tx, cx, cy)
        total += gaussian_nll(ty, stats.mean, stats.std)
    return total


@pytest.fixture(scope="module")
def trained_sinusoid_np():
    rng = np.random.default_rng(2024)
    model = NpModel.create(1, 1, seed=0)
    heldout = [_sinusoid_task(rng) for _ in range(30)]
    before = _heldout_nll(model, heldout)
    opt = nn.OptimizerState.create(model.flat().size, 1e-3)
    for _ in range(3000):
        cx, cy, tx, ty = _sinusoid_task(rng)
        _, grad, _ = elbo_loss(model, cx, cy, tx, ty, rng.standard_normal(model.z_dim))
        values, opt = nn.optimizer_step(model.flat(), grad, opt)
        model = model.with_flat(values)
    return model, before, _heldout_nll(model, heldout)


def test_training_reduces_heldout_nll(trained_sinusoid_np):
    _, before, after = trained_sinusoid_np
    assert after <= before - 0.3 * abs(before)


def test_predictive_std_grows_away_from_context(trained_sinusoid_np):
    model = trained_sinusoid_np[0]
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(20):
        amp, phase = rng.uniform(0.5, 2.0), rng.uniform(0, np.pi)
        cx = rng.uniform(-1, 1, size=(10, 1))
        cy = amp * np.sin(cx + phase)
        near = np_predict(model, np.array([0.0]), cx, cy).std[0]
        far = np_predict(model, np.array([3.0]), cx, cy).std[0]
        ratios.append(far / near)
    assert np.median(ratios) > 1.0
