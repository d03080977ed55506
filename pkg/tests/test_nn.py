import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_diff, rel_err
from imel import nn
from imel.errors import ShapeError, TrainingDivergence


def test_zero_weights_give_activation_of_zero():
    shapes, acts = nn.mlp_layout([3, 4, 2], "tanh", "softplus")
    p = nn.NetParams(np.zeros(nn.param_count(shapes)), shapes, acts)
    out = nn.forward(p, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.full(2, np.log(2.0)))


def test_identity_layer():
    p = nn.NetParams(np.concatenate([np.eye(3).ravel(), np.zeros(3)]), [(3, 3, True)], ["linear"])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(nn.forward(p, x), x)


def test_forward_matches_hand_unrolled(rng):
    p = nn.mlp([3, 5, 2], rng)
    x = rng.normal(size=3)
    (w1, b1), (w2, b2) = p.layers()
    hidden = []
    for i in range(5):
        acc = b1[i]
        for j in range(3):
            acc += w1[i, j] * x[j]
        hidden.append(np.tanh(acc))
    expected = []
    for i in range(2):
        acc = b2[i]
        for j in range(5):
            acc += w2[i, j] * hidden[j]
        expected.append(acc)
    np.testing.assert_allclose(nn.forward(p, x), expected, rtol=1e-14, atol=1e-15)


def test_batch_rows_are_independent(rng):
    p = nn.mlp([3, 8, 8, 2], rng)
    xs = rng.normal(size=(6, 3))
    batch = nn.forward(p, xs)
    for i in range(6):
        np.testing.assert_allclose(batch[i], nn.forward(p, xs[i]), rtol=1e-12, atol=1e-14)


def test_shape_mismatch_raises(rng):
    p = nn.mlp([3, 4, 1], rng)
    with pytest.raises(ShapeError):
        nn.forward(p, np.zeros(4))
    with pytest.raises(ShapeError):
        nn.backward(p, np.zeros(3), np.zeros(2))
    with pytest.raises(ShapeError):
        nn.NetParams(np.zeros(5), [(2, 2, True)], ["linear"])


def test_zero_upstream_gives_zero_gradients(rng):
    p = nn.mlp([3, 4, 2], rng)
    g, gx = nn.backward(p, rng.normal(size=3), np.zeros(2))
    assert not g.any() and not gx.any()


def test_linear_neuron_gradient_is_input():
    p = nn.NetParams(np.array([0.3, -0.7]), [(1, 2, False)], ["linear"])
    x = np.array([2.0, 5.0])
    g, gx = nn.backward(p, x, np.array([1.0]))
    np.testing.assert_array_equal(g, x)
    np.testing.assert_array_equal(gx, p.values)


@pytest.mark.parametrize("acts", [("tanh", "linear"), ("relu", "softplus"), ("softplus", "tanh")])
def test_two_layer_gradient_matches_finite_differences(rng, acts):
    shapes, _ = nn.mlp_layout([4, 6, 3])
    p = nn.init_params(shapes, acts, rng)
    x = rng.normal(size=(5, 4))
    up = rng.normal(size=(5, 3))
    g, gx = nn.backward(p, x, up)
    fd = central_diff(lambda v: np.sum(up * nn.forward(p.replace(v), x)), p.values)
    fdx = central_diff(lambda v: np.sum(up * nn.forward(p, v.reshape(5, 4))), x.ravel())
    assert rel_err(g, fd) < 1e-6
    assert rel_err(gx, fdx) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.lists(st.integers(1, 6), min_size=2, max_size=4))
def test_master_gradient_property(seed, sizes):
    rng = np.random.default_rng(seed)
    p = nn.mlp(sizes, rng)
    x = rng.normal(size=(3, sizes[0]))
    up = rng.normal(size=(3, sizes[-1]))
    g, _ = nn.backward(p, x, up)
    fd = central_diff(lambda v: np.sum(up * nn.forward(p.replace(v), x)), p.values)
    assert rel_err(g, fd) < 1e-5


def test_init_is_seeded_and_fan_in_scaled():
    shapes, acts = nn.mlp_layout([64, 160])
    a = nn.init_params(shapes, acts, 7)
    b = nn.init_params(shapes, acts, 7)
    np.testing.assert_array_equal(a.values, b.values)
    w, bias = a.layers()[0]
    assert w.size == 10240
    assert abs(w.var() - 1 / 64) < 0.2 / 64
    assert not bias.any()


def test_sgd_first_step_is_plain_gradient_descent(rng):
    v = rng.normal(size=5)
    g = rng.normal(size=5)
    state = nn.OptimizerState.create(5, 0.1, "sgd")
    new, state = nn.optimizer_step(v, g, state)
    np.testing.assert_array_equal(new, v - 0.1 * g)
    assert state.step_count == 1


def test_zero_gradient_leaves_params_and_decays_moments(rng):
    p = nn.mlp([2, 3, 1], rng)
    state = nn.OptimizerState.create(p.size, 0.01)
    state.first_moment[:] = 1.0
    state.second_moment[:] = 1.0
    new, s2 = nn.optimizer_step(p, np.zeros(p.size), state)
    # Adam with zero gradient still moves along the stored momentum; with
    # zeroed moments it must not move at all
    fresh = nn.OptimizerState.create(p.size, 0.01)
    unchanged, s3 = nn.optimizer_step(p, np.zeros(p.size), fresh)
    np.testing.assert_array_equal(unchanged.values, p.values)
    np.testing.assert_allclose(s2.first_moment, 0.9)
    np.testing.assert_allclose(s2.second_moment, 0.999)
    assert s3.step_count == 1


def test_adam_step_bound(rng):
    # Cauchy-Schwarz on the moment sums gives, for step t,
    # |dx| <= lr * (1-b1)/(1-b1^t) * sqrt((1-b2^t)/(1-b2)) * sqrt(sum_k<t (b1^2/b2)^k)
    b1, b2, lr = 0.9, 0.999, 0.01
    v = np.zeros(50)
    state = nn.OptimizerState.create(50, lr, eps=0.0)
    for t in range(1, 200):
        g = rng.standard_cauchy(50)
        new, state = nn.optimizer_step(v, g, state)
        r = b1 * b1 / b2
        bound = lr * (1 - b1) / (1 - b1 ** t) * np.sqrt((1 - b2 ** t) / (1 - b2)) * np.sqrt((1 - r ** t) / (1 - r))
        assert np.all(np.abs(new - v) <= bound * (1 + 1e-12))
        v = new


def test_non_finite_gradient_raises(rng):
    state = nn.OptimizerState.create(3)
    with pytest.raises(TrainingDivergence):
        nn.optimizer_step(np.zeros(3), np.array([0.0, np.nan, 1.0]), state)


def test_snapshot_roundtrip(tmp_path, rng):
    a = nn.mlp([3, 4, 2], rng)
    b = nn.mlp([2, 1], rng, output_activation="tanh")
    L = rng.normal(size=(2, 2))
    path = tmp_path / "m.snap"
    nn.save_snapshot(path, {"a": a, "b": b}, {"L": L}, meta={"kind": "test"})
    nets, arrays, meta = nn.load_snapshot(path)
    np.testing.assert_array_equal(nets["a"].values, a.values)
    assert nets["a"].shapes == a.shapes
    assert nets["b"].activations == ("tanh",)
    np.testing.assert_array_equal(nets["b"].values, b.values)
    np.testing.assert_array_equal(arrays["L"], L)
    assert meta == {"kind": "test"}
    raw = path.read_bytes()
    assert raw.startswith(b"IMELSNAP 1\n")
    # payload is the concatenation of values in header order, little-endian
    payload = np.frombuffer(raw.split(b"\n", 2)[2], dtype="<f8")
    np.testing.assert_array_equal(payload, np.concatenate([a.values, b.values, L.ravel()]))
