import numpy as np
import pytest

from vbident import tcl
from vbident.ensemble import (
    Ensemble,
    baseline_power,
    brute_force_dispatch,
    build_dataset,
    dispatch_step,
    grow_ensemble,
    make_ensemble,
    power_limits,
    simulate_signals,
    simulate_tracking,
)
from vbident.errors import DataError
from vbident.signals import scale_signal, synth_signal


def _ens(temps, powers, rated=2.0, kind="ac"):
    p = tcl.AcParams(rated_power=rated) if kind == "ac" else tcl.WhParams(rated_power=rated)
    return Ensemble(kind, [p] * len(temps), temps, powers, 86.0 if kind == "ac" else 70.0)


def test_make_ensemble_is_seeded_and_inside_deadband():
    a, b = make_ensemble("ac", 30, seed=5), make_ensemble("ac", 30, seed=5)
    np.testing.assert_array_equal(a.temperatures, b.temperatures)
    assert np.all(np.abs(a.temperatures - 72) <= 1)
    with pytest.raises(ValueError):
        make_ensemble("fridge", 3)
    with pytest.raises(ValueError):
        make_ensemble("ac", 0)


def test_grow_keeps_existing_devices():
    e = make_ensemble("wh", 5, seed=1)
    g = grow_ensemble(e, 8, seed=2)
    assert len(g) == 8
    np.testing.assert_array_equal(g.temperatures[:5], e.temperatures)
    with pytest.raises(ValueError):
        grow_ensemble(e, 4)


def test_dispatch_no_switch_when_on_target():
    e = _ens([72.2, 71.8, 72.5], [2.0, 0.0, 2.0])
    powers, err = dispatch_step(e, 4.0)
    np.testing.assert_array_equal(powers, e.powers)
    assert err == 0


def test_dispatch_all_off_for_zero_target():
    e = _ens([72.2, 71.8, 72.5], [2.0, 2.0, 2.0])
    powers, err = dispatch_step(e, 0.0)
    assert np.all(powers == 0) and err == 0


def test_dispatch_three_devices_two_on():
    e = _ens([72.2, 71.8, 72.5], [0.0, 0.0, 0.0])
    powers, err = dispatch_step(e, 4.0)
    assert np.count_nonzero(powers) == 2 and err == 0
    assert brute_force_dispatch(e, 4.0) == 0
    # warmest rooms are switched on first
    assert powers[1] == 0


def test_dispatch_respects_forced_devices():
    e = _ens([73.5, 70.5, 72.0], [0.0, 2.0, 0.0])
    powers, _ = dispatch_step(e, 0.0)
    assert powers[0] == 2.0 and powers[1] == 0.0
    with pytest.raises(ValueError):
        dispatch_step(e, -1.0)


@pytest.mark.parametrize("kind", ["ac", "wh"])
def test_dispatch_within_one_rating_of_brute_force(kind, rng):
    for _ in range(60):
        n = int(rng.integers(1, 11))
        e = make_ensemble(kind, n, seed=int(rng.integers(1 << 30)), spread=0.3)
        e.temperatures = e.setpoint + rng.uniform(-0.6, 0.6, n) * e.deadband
        target = float(rng.uniform(0, e.total_rated_power))
        _, err = dispatch_step(e, target)
        assert err <= brute_force_dispatch(e, target) + e.rated.max() + 1e-9


def test_baseline_matches_duty_cycle():
    one = make_ensemble("ac", 1, tcl.AcParams(rated_power=5.0, efficiency=2.8), seed=0)
    duty = tcl.ac_duty_cycle(one.devices[0], 86.0)
    assert duty == pytest.approx(0.5)
    assert baseline_power(one, 48 * 3600, dt=10) == pytest.approx(2.5, rel=0.05)
    many = make_ensemble("ac", 50, seed=4)
    assert baseline_power(many, 6 * 3600, dt=5) == pytest.approx(50 * 5.6 * 0.5, rel=0.05)
    with pytest.raises(ValueError):
        baseline_power(many, 0.0)


def test_zero_regulation_tracks_baseline():
    e = make_ensemble("ac", 20, seed=2)
    base = baseline_power(e, 3600)
    traj = simulate_tracking(e, np.zeros(7200), base)
    assert traj.failure_step is None and len(traj) == 7200
    assert np.all(traj.tracking_error <= e.rated.max())


def test_excess_demand_fails_and_truncates():
    e = make_ensemble("ac", 10, seed=2)
    base = baseline_power(e, 3600)
    u = np.full(600, e.total_rated_power - base + 1.0)
    traj = simulate_tracking(e, u, base, fail_threshold=0.5)
    assert traj.failure_step is not None
    assert len(traj) == traj.failure_step == traj.temperatures.shape[0]


def test_simulation_independent_of_workers():
    e = make_ensemble("ac", 6, seed=9)
    sigs = [scale_signal(synth_signal(s, duration=300), e.total_rated_power) for s in range(3)]
    base = baseline_power(e, 600)
    serial = simulate_signals(e, sigs, base, workers=1)
    parallel = simulate_signals(e, sigs, base, workers=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.temperatures, b.temperatures)


def test_power_limits_degenerate_deadband():
    p = tcl.with_deadband(tcl.AcParams(), 1e-6)
    e = make_ensemble("ac", 5, p, seed=1)
    lo, hi = power_limits(e, 300, tol=0.5)
    assert 0 <= hi <= e.rated.max() + 0.5
    assert -(e.rated.max() + 0.5) <= lo <= 0


def test_dataset_layout_small():
    e = make_ensemble("ac", 1, seed=0)
    traj = simulate_tracking(e, np.zeros(10), baseline_power(e, 600))
    ds = build_dataset([traj], e)
    assert ds.data.shape == (10, 5)
    np.testing.assert_array_equal(ds.data[:, 1], 72.0)
    np.testing.assert_array_equal(ds.data[:, 4], traj.aggregate)
    other = make_ensemble("ac", 2, seed=0)
    with pytest.raises(DataError):
        build_dataset([traj], other)
