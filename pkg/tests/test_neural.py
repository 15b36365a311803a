import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbident.errors import DivergenceError
from vbident.neural import (
    LSTM,
    Conv1D,
    Dense,
    MaxPool1D,
    Network,
    conv1d_forward,
    conv1d_output_length,
    dense_forward,
    dense_stack,
    grad_check,
    lipschitz_estimate,
    lstm_step,
    pool_forward,
    pool_output_length,
    sgd_step,
    train,
)
from vbident.neural.functional import sigmoid


def test_dense_forward_cases(rng):
    x = rng.standard_normal(4)
    np.testing.assert_array_equal(dense_forward(x, np.eye(4), np.zeros(4)), x)
    W, b = rng.standard_normal((2, 3)), rng.standard_normal(2)
    np.testing.assert_array_equal(dense_forward(np.zeros(3), W, b), b)
    v = rng.standard_normal(3)
    by_hand = [sum(W[r, c] * v[c] for c in range(3)) + b[r] for r in range(2)]
    np.testing.assert_allclose(dense_forward(v, W, b), by_hand, rtol=1e-14)
    with pytest.raises(ValueError):
        dense_forward(np.zeros(2), W, b)


def test_conv_shape_examples():
    assert conv1d_output_length(10, 3, 1, 0) == 8
    assert conv1d_output_length(7200, 3, 1, 1) == 7200
    assert pool_output_length(8, 2, 2) == 4
    with pytest.raises(ValueError):
        conv1d_output_length(10, 3, 4, 0)
    with pytest.raises(ValueError):
        pool_output_length(9, 2, 2)


def test_conv_all_ones_is_window_sum(rng):
    x = rng.standard_normal((1, 12, 1))
    out = conv1d_forward(x, np.ones((1, 4, 1)), np.zeros(1))
    direct = [x[0, k:k + 4, 0].sum() for k in range(9)]
    np.testing.assert_allclose(out[0, :, 0], direct, rtol=1e-13)


def test_pool_constant_and_parameter_free():
    x = np.full((2, 8, 3), 1.5)
    np.testing.assert_array_equal(pool_forward(x, 2, 2), np.full((2, 4, 3), 1.5))
    assert MaxPool1D(2, 2).n_params == 0


def test_parameter_counts():
    assert Dense(5, 3).n_params == 18
    assert Conv1D(2, 4, 3).n_params == 3 * 2 * 4 + 4


@settings(max_examples=150, deadline=None)
@given(h=st.integers(1, 300), f=st.integers(1, 9), s=st.integers(1, 5), p=st.integers(0, 4),
       d=st.integers(1, 3), k=st.integers(1, 3))
def test_conv_shape_formula_property(h, f, s, p, d, k):
    span = h - f + 2 * p
    if span < 0 or span % s:
        with pytest.raises(ValueError):
            conv1d_output_length(h, f, s, p)
        return
    expected = span // s + 1
    assert conv1d_output_length(h, f, s, p) == expected
    out = conv1d_forward(np.zeros((1, h, d)), np.zeros((k, f, d)), np.zeros(k), s, p)
    assert out.shape == (1, expected, k)


@settings(max_examples=150, deadline=None)
@given(h=st.integers(1, 300), f=st.integers(1, 6), s=st.integers(1, 5))
def test_pool_shape_formula_property(h, f, s):
    span = h - f
    if span < 0 or span % s:
        with pytest.raises(ValueError):
            pool_output_length(h, f, s)
        return
    assert pool_output_length(h, f, s) == span // s + 1
    assert pool_forward(np.zeros((1, h, 2)), f, s).shape == (1, span // s + 1, 2)


def _lstm_params(rng, n, d):
    return {"Wx": rng.standard_normal((4 * n, d)), "Wh": rng.standard_normal((4 * n, n)),
            "wc": rng.standard_normal((3, n)), "b": rng.standard_normal(4 * n)}


def test_lstm_zero_weights_and_memory_hold(rng):
    zero = {"Wx": np.zeros((8, 3)), "Wh": np.zeros((8, 2)), "wc": np.zeros((3, 2)), "b": np.zeros(8)}
    h, c, _ = lstm_step(zero, rng.standard_normal(3), np.zeros(2), np.zeros(2))
    assert np.all(h == 0) and np.all(c == 0)
    hold = dict(zero, b=np.concatenate([np.full(2, -50.0), np.full(2, 50.0), np.zeros(4)]))
    c_prev = np.array([0.3, -1.2])
    _, c, _ = lstm_step(hold, rng.standard_normal(3), np.zeros(2), c_prev)
    np.testing.assert_allclose(c, c_prev, atol=1e-20)


def test_lstm_matches_scalar_evaluation(rng):
    n, d = 2, 3
    p = _lstm_params(rng, n, d)
    x, h0, c0 = rng.standard_normal(d), rng.standard_normal(n), rng.standard_normal(n)
    h, c, _ = lstm_step(p, x, h0, c0)
    sig = lambda v: 1 / (1 + math.exp(-v))
    for u in range(n):
        def pre(g):
            r = g * n + u
            return sum(p["Wx"][r, j] * x[j] for j in range(d)) + sum(p["Wh"][r, j] * h0[j] for j in range(n)) + p["b"][r]
        i = sig(pre(0) + p["wc"][0, u] * c0[u])
        f = sig(pre(1) + p["wc"][1, u] * c0[u])
        z = math.tanh(pre(2))
        cu = f * c0[u] + i * z
        o = sig(pre(3) + p["wc"][2, u] * c0[u])
        assert c[u] == pytest.approx(cu, rel=1e-12)
        assert h[u] == pytest.approx(o * math.tanh(cu), rel=1e-12)


def test_sigmoid_is_stable():
    assert sigmoid(-1000.0) == 0.0 and sigmoid(1000.0) == 1.0


def _composite(seed=0):
    rng = np.random.default_rng(seed)
    return Network([Conv1D(1, 3, 3, padding=1, activation="relu", rng=rng), MaxPool1D(2, 2),
                    LSTM(3, 4, rng=rng), Dense(4, 1, rng=rng)], (8, 1), seed)


def test_zero_gradient_at_target_and_scaling(rng):
    net = dense_stack([4, 3, 2], "tanh", seed=1)
    x = rng.standard_normal((10, 4))
    _, grads = net.loss_and_grads(x, net.forward(x))
    assert all(np.all(g == 0) for layer in grads for g in layer.values())
    t = rng.standard_normal((10, 2))
    _, g1 = net.loss_and_grads(x, t)
    _, g2 = net.loss_and_grads(x, t, scale=2.0)
    for a, b in zip(g1, g2):
        for k in a:
            np.testing.assert_allclose(b[k], 2 * a[k], rtol=1e-14)


def test_sgd_step_cases():
    net = dense_stack([2, 1], seed=0)
    before = net.layers[0].params["W"].copy()
    sgd_step(net, [{"W": np.zeros((1, 2)), "b": np.zeros(1)}], 0.1)
    np.testing.assert_array_equal(net.layers[0].params["W"], before)
    with pytest.raises(ValueError):
        sgd_step(net, [{"W": np.zeros((1, 2)), "b": np.zeros(1)}], 0.0)
    # scalar quadratic: one small step lowers the loss
    net = Network([Dense(1, 1, W=np.array([[3.0]]), b=np.zeros(1))], (1,))
    x, t = np.ones((1, 1)), np.zeros((1, 1))
    loss, grads = net.loss_and_grads(x, t)
    sgd_step(net, grads, 0.01)
    assert net.loss(x, t) < loss


def test_full_batch_descent_below_inverse_lipschitz_is_monotone(rng):
    X = rng.standard_normal((64, 6)) @ rng.standard_normal((6, 6))
    net = dense_stack([6, 3, 6], seed=2)
    # Lipschitz constant of the gradient of one layer at fixed partner weights, bounded via power iteration
    lam = lipschitz_estimate(X)
    w_norm = max(np.linalg.norm(l.params["W"], 2) for l in net.layers)
    lr = 0.5 / (2 * lam * (w_norm ** 2 + 1) * 4)
    losses = []
    for _ in range(100):
        loss, grads = net.loss_and_grads(X, X)
        losses.append(loss)
        sgd_step(net, grads, lr)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_training_is_deterministic(rng):
    X = rng.standard_normal((50, 5))
    runs = []
    for _ in range(2):
        net = dense_stack([5, 2, 5], seed=4)
        runs.append((train(net, X, X, epochs=3, lr=0.05, seed=9), net.layers[0].params["W"].copy()))
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    X = np.full((8, 2), 1e200)
    net = dense_stack([2, 2], seed=0)
    with pytest.raises(DivergenceError):
        train(net, X, X, epochs=5, lr=1e10)


def test_checks_per_epoch_history_length(rng):
    X = rng.standard_normal((40, 3))
    net = dense_stack([3, 3], seed=0)
    assert len(train(net, X, X, epochs=2, lr=0.01, batch=8, checks_per_epoch=5)) == 10


@pytest.mark.parametrize("kind", ["dense", "conv_pool", "lstm", "composite"])
def test_gradient_check(kind, rng):
    if kind == "dense":
        net = dense_stack([5, 4, 3], "tanh", seed=1)
        x, t = rng.standard_normal((10, 5)), rng.standard_normal((10, 3))
    elif kind == "conv_pool":
        r = np.random.default_rng(2)
        net = Network([Conv1D(2, 3, 3, stride=1, padding=1, activation="tanh", rng=r), MaxPool1D(2, 2)], (8, 2))
        x, t = rng.standard_normal((10, 8, 2)), rng.standard_normal((10, 4, 3))
    elif kind == "lstm":
        net = Network([LSTM(2, 3, rng=np.random.default_rng(3))], (5, 2))
        x, t = rng.standard_normal((10, 5, 2)), rng.standard_normal((10, 3))
    else:
        net = _composite()
        x, t = rng.standard_normal((10, 8, 1)), rng.standard_normal((10, 1))
    assert grad_check(net, x, t) <= 1e-4


def test_spec_round_trip(rng):
    net = _composite(3)
    clone = Network.from_spec(net.spec(), dict(net.named_params()))
    x = rng.standard_normal((4, 8, 1))
    np.testing.assert_array_equal(net.forward(x), clone.forward(x))
