"""Hybrid dynamics of thermostatically controlled loads.

Two device families are modelled, air conditioners (cooling) and electric
water heaters (heating). Each has a continuous temperature and a discrete
on/off power draw. Temperatures are integrated exactly over a step with the
power (and water draw) held constant, then the thermostat is evaluated on the
new temperature.

Units are degF, kW, kWh and hours. Step lengths are passed in seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SECONDS_PER_HOUR = 3600.0

COOLING = "cooling"
HEATING = "heating"


@dataclass(frozen=True)
class AcParams:
    thermal_capacitance: float = 2.0  # kWh/degF
    thermal_resistance: float = 2.0  # degF/kW
    efficiency: float = 2.5
    rated_power: float = 5.6  # kW
    setpoint: float = 72.0
    deadband: float = 2.0

    def __post_init__(self):
        for name in ("thermal_capacitance", "thermal_resistance", "efficiency", "rated_power", "deadband"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not math.isfinite(self.setpoint):
            raise ValueError("setpoint must be finite")

    @property
    def mode(self) -> str:
        return COOLING


@dataclass(frozen=True)
class WhParams:
    tank_capacitance: float = 0.1222  # kWh/degF, ~50 gal
    thermal_conductance: float = 0.0015  # kW/degF
    water_heat_capacity: float = 0.002444  # kWh/(gal degF)
    rated_power: float = 4.5  # kW
    setpoint: float = 120.0
    deadband: float = 4.0
    inlet_temp: float = 60.0

    def __post_init__(self):
        for name in (
            "tank_capacitance",
            "thermal_conductance",
            "water_heat_capacity",
            "rated_power",
            "setpoint",
            "deadband",
            "inlet_temp",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")

    @property
    def mode(self) -> str:
        return HEATING

    # aliases matching the AC field names, used by the ensemble code
    @property
    def efficiency(self) -> float:
        return 1.0

    @property
    def thermal_capacitance(self) -> float:
        return self.tank_capacitance


@dataclass(frozen=True)
class DeviceState:
    temperature: float
    power_draw: float


def thermostat(temperature, current_power, setpoint, deadband, rated_power, mode=COOLING):
    """Hysteresis switching law; works elementwise on arrays.

    Cooling devices switch on at the upper deadband edge and off at the lower
    one; heating devices the other way round. Inside the band the current
    power is held.
    """
    half = 0.5 * np.asarray(deadband)
    upper = np.asarray(setpoint) + half
    lower = np.asarray(setpoint) - half
    temperature = np.asarray(temperature)
    if mode == COOLING:
        on, off = temperature >= upper, temperature <= lower
    elif mode == HEATING:
        on, off = temperature <= lower, temperature >= upper
    else:
        raise ValueError(f"unknown thermostat mode {mode!r}")
    out = np.where(on, rated_power, np.where(off, 0.0, current_power))
    return out if out.ndim else float(out)


def forced_masks(temperature, setpoint, deadband, mode):
    """Boolean masks of devices that must be on / must be off right now."""
    half = 0.5 * deadband
    if mode == COOLING:
        return temperature >= setpoint + half, temperature <= setpoint - half
    return temperature <= setpoint - half, temperature >= setpoint + half


def ac_temperature(temperature, power, capacitance, resistance, efficiency, ambient, dt):
    """Exact solution of the room ODE after ``dt`` seconds (array friendly)."""
    hours = dt / SECONDS_PER_HOUR
    equilibrium = ambient - efficiency * power * resistance
    decay = np.exp(-hours / (capacitance * resistance))
    return equilibrium + (temperature - equilibrium) * decay


def wh_temperature(temperature, power, tank_capacitance, conductance, heat_capacity,
                   inlet_temp, ambient, flow_rate, dt):
    """Exact solution of the single-node tank ODE after ``dt`` seconds."""
    hours = dt / SECONDS_PER_HOUR
    rate = (flow_rate * heat_capacity + conductance) / tank_capacitance
    forcing = (power + flow_rate * heat_capacity * inlet_temp + conductance * ambient) / tank_capacitance
    fixed_point = forcing / rate
    return fixed_point + (temperature - fixed_point) * np.exp(-rate * hours)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input to device step")


def ac_step(state: DeviceState, params: AcParams, ambient_temp: float, dt: float) -> DeviceState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_finite(state.temperature, state.power_draw, ambient_temp, dt)
    t_new = float(
        ac_temperature(
            state.temperature,
            state.power_draw,
            params.thermal_capacitance,
            params.thermal_resistance,
            params.efficiency,
            ambient_temp,
            dt,
        )
    )
    p_new = thermostat(t_new, state.power_draw, params.setpoint, params.deadband, params.rated_power, COOLING)
    return DeviceState(t_new, float(p_new))


def wh_step(state: DeviceState, params: WhParams, ambient_temp: float, flow_rate: float, dt: float) -> DeviceState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if flow_rate < 0:
        raise ValueError("flow rate must be non-negative")
    _check_finite(state.temperature, state.power_draw, ambient_temp, flow_rate, dt)
    t_new = float(
        wh_temperature(
            state.temperature,
            state.power_draw,
            params.tank_capacitance,
            params.thermal_conductance,
            params.water_heat_capacity,
            params.inlet_temp,
            ambient_temp,
            flow_rate,
            dt,
        )
    )
    p_new = thermostat(t_new, state.power_draw, params.setpoint, params.deadband, params.rated_power, HEATING)
    return DeviceState(t_new, float(p_new))


def ac_duty_cycle(params: AcParams, ambient_temp: float) -> float:
    """Steady-state on fraction at the setpoint (0..1, clipped)."""
    load = (ambient_temp - params.setpoint) / params.thermal_resistance
    return float(np.clip(load / (params.efficiency * params.rated_power), 0.0, 1.0))


def wh_duty_cycle(params: WhParams, ambient_temp: float, flow_rate: float) -> float:
    loss = flow_rate * params.water_heat_capacity * (params.setpoint - params.inlet_temp)
    loss += params.thermal_conductance * (params.setpoint - ambient_temp)
    return float(np.clip(loss / params.rated_power, 0.0, 1.0))


def medium_flow_rate(params: WhParams, ambient_temp: float, duty: float = 0.5) -> float:
    """Constant hot-water draw (gal/h) giving the requested duty cycle at setpoint.

    Stands in for the unquantified "medium" flow rate.
    """
    standing = params.thermal_conductance * (params.setpoint - ambient_temp)
    per_gallon = params.water_heat_capacity * (params.setpoint - params.inlet_temp)
    flow = (duty * params.rated_power - standing) / per_gallon
    if flow < 0:
        raise ValueError("standing losses alone exceed the requested duty")
    return float(flow)


def with_deadband(params, deadband: float):
    return replace(params, deadband=deadband)
