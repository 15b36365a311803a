import numpy as np
import pytest

from vbident import sae
from vbident.ensemble import Dataset, baseline_power, build_dataset, make_ensemble, simulate_signals
from vbident.signals import scale_signal, synth_signal


def _zero_biases(net):
    for layer in net.layers:
        layer.params["b"][:] = 0.0
    return net


def test_reference_schedule():
    assert sae.widths_of(sae.build_sae(203)) == [203, 150, 100, 50, 20, 1, 20, 50, 100, 150, 203]


def test_small_schedules():
    for d in (2, 3, 5, 43):
        w = sae.widths_of(sae.build_sae(d))
        assert w[0] == w[-1] == d and min(w) == 1 and w == w[::-1]
        enc = w[:len(w) // 2 + 1]
        assert all(a > b for a, b in zip(enc, enc[1:]))
    assert len(sae.widths_of(sae.build_sae(5))) >= 5
    with pytest.raises(ValueError):
        sae.build_sae(10, hidden=[4, 6])


def test_encode_decode_shapes_and_linearity(rng):
    net = _zero_biases(sae.build_sae(9, seed=1))
    assert sae.encode(net, np.zeros(9)) == 0.0
    v, w = rng.standard_normal(9), rng.standard_normal(9)
    assert sae.encode(net, 3.5 * v) == pytest.approx(3.5 * sae.encode(net, v), rel=1e-12)
    assert sae.encode(net, v + w) == pytest.approx(sae.encode(net, v) + sae.encode(net, w), rel=1e-10, abs=1e-12)
    np.testing.assert_allclose(sae.decode(net, 2.0), 2.0 * sae.decode(net, 1.0), rtol=1e-12)
    assert sae.decode(net, 0.7).shape == (9,)
    assert sae.decode(net, np.ones(4)).shape == (4, 9)
    assert sae.encode(net, rng.standard_normal((6, 9))).shape == (6,)
    with pytest.raises(ValueError):
        sae.encode(net, np.zeros(8))


def test_rank_one_dataset_is_reconstructed(rng):
    v = rng.uniform(1, 2, 11)
    data = rng.uniform(-3, 3, (400, 1)) * v
    net, hist = sae.train_sae(sae.build_sae(11, seed=0), data, epochs=100, lr=0.5, seed=0)
    assert hist[-1] <= 1e-6 * np.mean(data ** 2)
    assert hist[-1] <= hist[0]


def test_zero_epochs_is_a_no_op(rng):
    net = sae.build_sae(7, seed=0)
    before = [p.copy() for _, p in net.named_params()]
    out, hist = sae.train_sae(net, rng.standard_normal((20, 7)), epochs=0)
    assert hist == []
    for a, (_, b) in zip(before, out.named_params()):
        np.testing.assert_array_equal(a, b)


def test_recenter_preserves_function(rng):
    data = rng.standard_normal((50, 6)) + 10
    net = sae.build_sae(6, seed=3)
    x = rng.standard_normal((7, 6))
    before = net.forward(x)
    sae.recenter(net, data)
    np.testing.assert_allclose(net.forward(x), before, atol=1e-10)
    hidden = net.forward(data, upto=2)
    np.testing.assert_allclose(hidden.mean(axis=0), 0.0, atol=1e-10)


def test_pca_floor_bounds_trained_loss(rng):
    data = rng.standard_normal((300, 2)) @ rng.standard_normal((2, 8)) + 5
    floor = sae.pca_floor(data)
    net, hist = sae.train_sae(sae.build_sae(8, seed=2), data, epochs=30, seed=1)
    assert hist[-1] >= floor * (1 - 1e-9)
    assert hist[-1] <= 1.05 * floor


def test_training_determinism(rng):
    data = rng.standard_normal((100, 5))
    a, ha = sae.train_sae(sae.build_sae(5, seed=1), data, epochs=3, seed=2)
    b, hb = sae.train_sae(sae.build_sae(5, seed=1), data, epochs=3, seed=2)
    assert ha == hb
    for (_, p), (_, q) in zip(a.named_params(), b.named_params()):
        np.testing.assert_array_equal(p, q)


def test_reconstruction_errors_report(rng):
    data = np.ones((30, 5)) * np.arange(1, 6)
    net, _ = sae.train_sae(sae.build_sae(5, seed=0), data, epochs=2)
    rep = sae.reconstruction_errors(net, data, slice(0, 2), bins=10)
    assert np.max(np.abs(rep["errors"])) < 1e-9
    assert rep["hist_counts"].sum() == 30 * 2
    sub = sae.reconstruction_errors(net, data, slice(0, 2), max_rows=7)
    assert sub["hist_counts"].sum() == 7 * 2


def test_desk_scale_ac_errors_within_band():
    e = make_ensemble("ac", 20, seed=0)
    sigs = [scale_signal(synth_signal(s, duration=1200), e.total_rated_power) for s in range(3)]
    ds = build_dataset(simulate_signals(e, sigs, baseline_power(e, 3600)), e)
    net, _ = sae.train_sae(sae.build_sae(ds.cols, seed=0), ds, epochs=20, seed=0)
    rep = sae.reconstruction_errors(net, ds, ds.temperature_block)
    assert -4.0 <= rep["min"] and rep["max"] <= 4.0
    series = sae.encode_dataset(net, ds)
    assert len(series.values) == ds.rows
    assert sum(len(v) for _, v in series.segments()) == ds.rows
