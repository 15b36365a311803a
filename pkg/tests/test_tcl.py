import math

import numpy as np
import pytest

from vbident import tcl
from vbident.tcl import AcParams, DeviceState, WhParams


def test_thermostat_examples():
    assert tcl.thermostat(75.0, 0.0, 72, 2, 5, tcl.COOLING) == 5
    assert tcl.thermostat(72.5, 5.0, 72, 2, 5, tcl.COOLING) == 5
    assert tcl.thermostat(72.5, 0.0, 72, 2, 5, tcl.COOLING) == 0
    assert tcl.thermostat(70.9, 5.0, 72, 2, 5, tcl.COOLING) == 0
    assert tcl.thermostat(118.0, 0.0, 120, 4, 7, tcl.HEATING) == 7
    assert tcl.thermostat(122.0, 7.0, 120, 4, 7, tcl.HEATING) == 0


def test_thermostat_rejects_unknown_mode():
    with pytest.raises(ValueError):
        tcl.thermostat(70.0, 0.0, 72, 2, 5, "freezing")


def test_ac_equilibrium_and_relaxation():
    p = AcParams()
    s = tcl.ac_step(DeviceState(86.0, 0.0), p, 86.0, 60.0)
    assert s.temperature == pytest.approx(86.0, abs=1e-12)
    # time constant C*R = 4 h; 200 h later the room sits at ambient
    p2 = AcParams(thermal_capacitance=1.0, thermal_resistance=2.0, setpoint=100.0, deadband=40.0)
    s = tcl.ac_step(DeviceState(70.0, 0.0), p2, 90.0, 200 * 3600.0)
    assert s.temperature == pytest.approx(90.0, abs=1e-9)


def test_ac_cooling_lowers_temperature_closed_form():
    p = AcParams()
    T0, Ta, dt = 72.5, 86.0, 60.0
    s = tcl.ac_step(DeviceState(T0, p.rated_power), p, Ta, dt)
    eq = Ta - p.efficiency * p.rated_power * p.thermal_resistance
    expected = eq + (T0 - eq) * math.exp(-(dt / 3600) / (p.thermal_capacitance * p.thermal_resistance))
    assert s.temperature == pytest.approx(expected, rel=1e-14)
    assert s.temperature < T0


def test_wh_equilibrium_relaxation_and_fixed_point():
    p = WhParams()
    s = tcl.wh_step(DeviceState(70.0, 0.0), p, 70.0, 0.0, 600.0)
    assert s.temperature == pytest.approx(70.0, abs=1e-12)
    # no flow, no heat: exponential approach to ambient with rate W/Cw per hour
    hours = 5.0
    s = tcl.wh_step(DeviceState(119.0, 0.0), p, 70.0, 0.0, hours * 3600)
    expected = 70 + 49 * math.exp(-p.thermal_conductance / p.tank_capacitance * hours)
    assert s.temperature == pytest.approx(expected, rel=1e-12)
    # heating element on with a draw: long-run fixed point b/a
    flow = 10.0
    a = (flow * p.water_heat_capacity + p.thermal_conductance) / p.tank_capacitance
    b = (p.rated_power + flow * p.water_heat_capacity * p.inlet_temp + p.thermal_conductance * 70) / p.tank_capacitance
    T = tcl.wh_temperature(100.0, p.rated_power, p.tank_capacitance, p.thermal_conductance,
                           p.water_heat_capacity, p.inlet_temp, 70.0, flow, 1e4 * 3600)
    assert T == pytest.approx(b / a, rel=1e-12)


def test_wh_step_rejects_bad_inputs():
    p = WhParams()
    with pytest.raises(ValueError):
        tcl.wh_step(DeviceState(110.0, 0.0), p, 70.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        tcl.wh_step(DeviceState(110.0, 0.0), p, 70.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        tcl.ac_step(DeviceState(float("nan"), 0.0), AcParams(), 86.0, 1.0)


@pytest.mark.parametrize("power", [0.0, 5.6])
def test_exact_integrator_matches_fine_substeps(power):
    """Closed form over 60 s equals 60 000 composed 1 ms closed-form steps."""
    p = AcParams()
    exact = tcl.ac_temperature(72.3, power, p.thermal_capacitance, p.thermal_resistance, p.efficiency, 86.0, 60.0)
    T = 72.3
    decay = tcl.ac_temperature(1.0, 0.0, p.thermal_capacitance, p.thermal_resistance, p.efficiency, 0.0, 1e-3)
    eq = 86.0 - p.efficiency * power * p.thermal_resistance
    for _ in range(60000):
        T = eq + (T - eq) * decay
    assert abs(T - exact) < 1e-9


def test_duty_cycles_and_medium_flow():
    assert tcl.ac_duty_cycle(AcParams(), 86.0) == pytest.approx(0.5)
    p = WhParams()
    flow = tcl.medium_flow_rate(p, 70.0)
    assert tcl.wh_duty_cycle(p, 70.0, flow) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        tcl.medium_flow_rate(p, 70.0, duty=0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        AcParams(thermal_capacitance=0.0)
    with pytest.raises(ValueError):
        WhParams(deadband=-1.0)


def test_hysteresis_fuzz_single_device(rng):
    """No state ever sits beyond a deadband edge by more than one step of drift."""
    p = AcParams()
    dt = 10.0
    state = DeviceState(72.0, 0.0)
    hi, lo = p.setpoint + p.deadband / 2, p.setpoint - p.deadband / 2
    # one-step drift bounds when off (towards ambient) and on (towards the cold equilibrium)
    drift = max(abs(tcl.ac_temperature(hi, 0.0, 2, 2, 2.5, 95.0, dt) - hi),
                abs(tcl.ac_temperature(lo, p.rated_power, 2, 2, 2.5, 80.0, dt) - lo))
    for ambient in rng.uniform(80, 95, size=2000):
        state = tcl.ac_step(state, p, float(ambient), dt)
        assert lo - drift - 1e-12 <= state.temperature <= hi + drift + 1e-12
