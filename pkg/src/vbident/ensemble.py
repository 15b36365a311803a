"""Closed-loop simulation of homogeneous TCL ensembles tracking regulation signals.

The ensemble is dispatched with a greedy priority stack: devices at a
deadband edge are switched first, the remaining ones are ranked by how close
they are to wanting to switch and toggled in that order until the aggregate
is as close to the target as the ordering allows.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tcl
from .errors import DataError
from .signals import RegulationSignal

AC = "ac"
WH = "wh"
KINDS = (AC, WH)


@dataclass
class Ensemble:
    """A homogeneous set of devices plus their current hybrid state."""

    kind: str
    devices: list
    temperatures: np.ndarray
    powers: np.ndarray
    ambient: float
    flow_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown device kind {self.kind!r}")
        if not self.devices:
            raise ValueError("ensemble must contain at least one device")
        expected = tcl.AcParams if self.kind == AC else tcl.WhParams
        if not all(isinstance(d, expected) for d in self.devices):
            raise ValueError("ensemble must be homogeneous in device kind")
        self.temperatures = np.array(self.temperatures, dtype=np.float64)
        self.powers = np.array(self.powers, dtype=np.float64)
        if self.temperatures.shape != (len(self.devices),) or self.powers.shape != (len(self.devices),):
            raise ValueError("state arrays must have one entry per device")
        self.setpoint = np.array([d.setpoint for d in self.devices])
        self.deadband = np.array([d.deadband for d in self.devices])
        self.rated = np.array([d.rated_power for d in self.devices])
        self.efficiency = np.array([d.efficiency for d in self.devices])
        self.capacitance = np.array([d.thermal_capacitance for d in self.devices])
        self.mode = tcl.COOLING if self.kind == AC else tcl.HEATING

    def __len__(self):
        return len(self.devices)

    def copy(self) -> "Ensemble":
        return replace(self, temperatures=self.temperatures.copy(), powers=self.powers.copy())

    @property
    def total_rated_power(self) -> float:
        return float(self.rated.sum())

    def step_coefficients(self, dt: float):
        """(decay, offset_off, offset_on) with T' = decay*T + offset_{on/off}."""
        if self.kind == AC:
            c = self.capacitance
            r = np.array([d.thermal_resistance for d in self.devices])
            decay = tcl.ac_temperature(1.0, 0.0, c, r, self.efficiency, 0.0, dt)
            off = tcl.ac_temperature(0.0, 0.0, c, r, self.efficiency, self.ambient, dt)
            on = tcl.ac_temperature(0.0, self.rated, c, r, self.efficiency, self.ambient, dt)
        else:
            args = (
                self.capacitance,
                np.array([d.thermal_conductance for d in self.devices]),
                np.array([d.water_heat_capacity for d in self.devices]),
                np.array([d.inlet_temp for d in self.devices]),
                self.ambient,
                self.flow_rate,
                dt,
            )
            rate = (self.flow_rate * args[2] + args[1]) / args[0]
            decay = np.exp(-rate * dt / tcl.SECONDS_PER_HOUR)
            off = tcl.wh_temperature(0.0, 0.0, *args)
            on = tcl.wh_temperature(0.0, self.rated, *args)
        return np.broadcast_to(decay, (len(self),)).copy(), off, on

    def advance(self, powers, dt: float) -> None:
        """Integrate every device over ``dt`` with ``powers`` held, then apply thermostats."""
        if self.kind == AC:
            r = np.array([d.thermal_resistance for d in self.devices])
            t_new = tcl.ac_temperature(self.temperatures, powers, self.capacitance, r, self.efficiency,
                                       self.ambient, dt)
        else:
            t_new = tcl.wh_temperature(
                self.temperatures,
                powers,
                self.capacitance,
                np.array([d.thermal_conductance for d in self.devices]),
                np.array([d.water_heat_capacity for d in self.devices]),
                np.array([d.inlet_temp for d in self.devices]),
                self.ambient,
                self.flow_rate,
                dt,
            )
        self.temperatures = t_new
        self.powers = tcl.thermostat(t_new, powers, self.setpoint, self.deadband, self.rated, self.mode)


def make_ensemble(kind: str, count: int, params=None, *, seed: int = 0, ambient: float | None = None,
                  flow_rate: float | None = None, spread: float = 0.0) -> Ensemble:
    """Build ``count`` devices and desynchronize them.

    Initial temperatures are uniform inside each deadband and devices start
    on with probability equal to the steady-state duty cycle. ``spread`` > 0
    perturbs capacitance, resistance/conductance and rated power by a
    uniform relative factor in [1-spread, 1+spread].
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    if kind == AC:
        base = params or tcl.AcParams()
        ambient = 86.0 if ambient is None else ambient
        flow_rate = 0.0
        keys = ("thermal_capacitance", "thermal_resistance", "rated_power")
    elif kind == WH:
        base = params or tcl.WhParams()
        ambient = 70.0 if ambient is None else ambient
        flow_rate = tcl.medium_flow_rate(base, ambient) if flow_rate is None else flow_rate
        keys = ("tank_capacitance", "thermal_conductance", "rated_power")
    else:
        raise ValueError(f"unknown device kind {kind!r}")
    devices = []
    for _ in range(count):
        if spread > 0:
            factors = rng.uniform(1 - spread, 1 + spread, size=len(keys))
            devices.append(replace(base, **{k: getattr(base, k) * f for k, f in zip(keys, factors)}))
        else:
            devices.append(base)
    half = np.array([d.deadband for d in devices]) / 2
    setpoint = np.array([d.setpoint for d in devices])
    temps = setpoint + rng.uniform(-1.0, 1.0, size=count) * half
    if kind == AC:
        duty = np.array([tcl.ac_duty_cycle(d, ambient) for d in devices])
    else:
        duty = np.array([tcl.wh_duty_cycle(d, ambient, flow_rate) for d in devices])
    on = rng.uniform(size=count) < duty
    powers = np.where(on, [d.rated_power for d in devices], 0.0)
    return Ensemble(kind, devices, temps, powers, ambient, flow_rate)


def grow_ensemble(ensemble: Ensemble, count: int, *, seed: int = 0) -> Ensemble:
    """Return ``ensemble`` with devices appended up to ``count``.

    Existing devices keep their parameters and state; each new device clones
    the parameters of the first device and starts desynchronized like
    :func:`make_ensemble`.
    """
    extra = count - len(ensemble)
    if extra < 0:
        raise ValueError("cannot shrink an ensemble")
    if extra == 0:
        return ensemble.copy()
    fresh = make_ensemble(ensemble.kind, extra, ensemble.devices[0], seed=seed, ambient=ensemble.ambient,
                          flow_rate=ensemble.flow_rate)
    return Ensemble(
        ensemble.kind,
        list(ensemble.devices) + fresh.devices,
        np.concatenate([ensemble.temperatures, fresh.temperatures]),
        np.concatenate([ensemble.powers, fresh.powers]),
        ensemble.ambient,
        ensemble.flow_rate,
    )


@dataclass
class Trajectory:
    temperatures: np.ndarray  # (steps, N) degF at the start of each step
    powers: np.ndarray  # (steps, N) kW drawn during each step
    aggregate: np.ndarray  # (steps,)
    signal: np.ndarray  # (steps,) regulation request u_t in kW
    target: np.ndarray  # (steps,)
    failure_step: int | None = None
    signal_id: str = ""

    def __len__(self):
        return len(self.aggregate)

    @property
    def tracking_error(self) -> np.ndarray:
        return np.abs(self.aggregate - self.target)


@dataclass
class Dataset:
    """Row-major matrix with column layout [T_1..T_N | Tset_1..Tset_N | eta | C | P_agg]."""

    data: np.ndarray
    n_devices: int
    kind: str = AC
    provenance: list = field(default_factory=list)  # (signal_id, start_row, stop_row)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def temperature_block(self) -> slice:
        return slice(0, self.n_devices)

    @property
    def setpoint_block(self) -> slice:
        return slice(self.n_devices, 2 * self.n_devices)

    def layout(self) -> dict:
        n = self.n_devices
        return {
            "kind": self.kind,
            "n_devices": n,
            "columns": 2 * n + 3,
            "blocks": {
                "temperature": [0, n],
                "setpoint": [n, 2 * n],
                "efficiency": [2 * n, 2 * n + 1],
                "capacitance": [2 * n + 1, 2 * n + 2],
                "aggregate_power": [2 * n + 2, 2 * n + 3],
            },
            "provenance": [list(p) for p in self.provenance],
        }


def dispatch_step(ensemble: Ensemble, target_power: float):
    """Greedy priority-stack switching decision.

    Returns ``(powers, achieved_error)``; the ensemble is not modified.
    Devices at a deadband edge take their mandatory state first. If the
    aggregate is below target, free off devices are switched on in order of
    decreasing normalized distance towards their on-edge; if above, free on
    devices are switched off starting from the ones nearest their off-edge.
    The prefix of that order giving the smallest error is applied.
    """
    if target_power < 0:
        raise ValueError("target power must be non-negative")
    temps = ensemble.temperatures
    powers = ensemble.powers.copy()
    must_on, must_off = tcl.forced_masks(temps, ensemble.setpoint, ensemble.deadband, ensemble.mode)
    powers[must_on] = ensemble.rated[must_on]
    powers[must_off] = 0.0
    free = ~(must_on | must_off)
    aggregate = powers.sum()
    gap = target_power - aggregate
    if gap == 0:
        return powers, 0.0
    # positive score: close to needing to be on
    score = (temps - ensemble.setpoint) / (0.5 * ensemble.deadband)
    if ensemble.mode == tcl.HEATING:
        score = -score
    if gap > 0:
        candidates = np.flatnonzero(free & (powers == 0))
        order = np.argsort(-score[candidates], kind="stable")
        sign = 1.0
    else:
        candidates = np.flatnonzero(free & (powers > 0))
        order = np.argsort(score[candidates], kind="stable")
        sign = -1.0
    if candidates.size == 0:
        return powers, float(abs(gap))
    ranked = candidates[order]
    reachable = aggregate + sign * np.concatenate(([0.0], np.cumsum(ensemble.rated[ranked])))
    errors = np.abs(reachable - target_power)
    k = int(np.argmin(errors))
    powers[ranked[:k]] = ensemble.rated[ranked[:k]] if sign > 0 else 0.0
    return powers, float(errors[k])


def brute_force_dispatch(ensemble: Ensemble, target_power: float) -> float:
    """Smallest achievable |aggregate - target| over all admissible on/off patterns."""
    must_on, must_off = tcl.forced_masks(ensemble.temperatures, ensemble.setpoint, ensemble.deadband,
                                         ensemble.mode)
    free = np.flatnonzero(~(must_on | must_off))
    fixed = ensemble.rated[must_on].sum()
    best = math.inf
    for pattern in itertools.product((0.0, 1.0), repeat=free.size):
        total = fixed + float(np.dot(pattern, ensemble.rated[free])) if free.size else fixed
        best = min(best, abs(total - target_power))
    return best


def baseline_power(ensemble: Ensemble, horizon: float, dt: float = 1.0) -> float:
    """Mean aggregate power (kW) under thermostat-only control over ``horizon`` seconds."""
    steps = int(horizon // dt)
    if steps < 1:
        raise ValueError("horizon must cover at least one step")
    ens = ensemble.copy()
    decay, off, on = ens.step_coefficients(dt)
    temps, powers = ens.temperatures, ens.powers
    total = 0.0
    for _ in range(steps):
        total += powers.sum()
        temps = decay * temps + np.where(powers > 0, on, off)
        powers = tcl.thermostat(temps, powers, ens.setpoint, ens.deadband, ens.rated, ens.mode)
    return total / steps


def simulate_tracking(ensemble: Ensemble, signal: RegulationSignal | np.ndarray, baseline: float, *,
                      dt: float | None = None, fail_threshold: float | None = None,
                      record: bool = True, signal_id: str = "") -> Trajectory:
    """Track ``baseline + u_t`` step by step until the horizon or the first failure.

    Failure is the first step whose achieved error exceeds ``fail_threshold``
    (default: the largest device rating); the trajectory stops before it.
    The input ensemble is left untouched.
    """
    if isinstance(signal, RegulationSignal):
        if signal.normalized:
            raise ValueError("signal must be scaled to kW before tracking")
        dt = signal.dt if dt is None else dt
        u = signal.samples
        signal_id = signal_id or signal.source
    else:
        u = np.asarray(signal, dtype=np.float64)
        dt = 1.0 if dt is None else dt
    if fail_threshold is None:
        fail_threshold = float(ensemble.rated.max())
    ens = ensemble.copy()
    decay, off, on = ens.step_coefficients(dt)
    n_steps, n_dev = len(u), len(ens)
    if record:
        temps_log = np.empty((n_steps, n_dev))
        powers_log = np.empty((n_steps, n_dev))
    failure = None
    for t in range(n_steps):
        target = baseline + u[t]
        powers, err = dispatch_step(ens, max(target, 0.0))
        if target < 0:
            err = abs(powers.sum() - target)
        if err > fail_threshold:
            failure = t
            break
        if record:
            temps_log[t] = ens.temperatures
            powers_log[t] = powers
        ens.temperatures = decay * ens.temperatures + np.where(powers > 0, on, off)
        ens.powers = tcl.thermostat(ens.temperatures, powers, ens.setpoint, ens.deadband, ens.rated, ens.mode)
    n = n_steps if failure is None else failure
    if not record:
        empty = np.empty((0, n_dev))
        return Trajectory(empty, empty, np.empty(0), u[:0], u[:0], failure, signal_id)
    temps_log, powers_log = temps_log[:n], powers_log[:n]
    return Trajectory(
        temperatures=temps_log,
        powers=powers_log,
        aggregate=powers_log.sum(axis=1),
        signal=u[:n].copy(),
        target=baseline + u[:n],
        failure_step=failure,
        signal_id=signal_id,
    )


def _simulate_job(args):
    ensemble, signal, baseline = args
    return simulate_tracking(ensemble, signal, baseline)


def simulate_signals(ensemble: Ensemble, signals, baseline: float, workers: int = 1) -> list[Trajectory]:
    """Run one tracking simulation per signal; output order follows ``signals``."""
    jobs = [(ensemble, s, baseline) for s in signals]
    if workers <= 1 or len(jobs) <= 1:
        return [_simulate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_job, jobs))


def _survives(ensemble, level, steps, dt, baseline, shape):
    u = level * (np.ones(steps) if shape is None else np.resize(shape, steps))
    traj = simulate_tracking(ensemble, u, baseline, dt=dt, record=False)
    return traj.failure_step is None


def _one_sided_search(predicate, tol, k_max):
    """Largest integer k in [0, k_max] with predicate(k*tol) true, assuming monotonicity.

    Doubling brackets the boundary, bisection closes it to one grid step.
    Returns None if even k=0 fails.
    """
    if not predicate(0.0):
        return None
    lo, hi = 0, 1
    while hi <= k_max and predicate(hi * tol):
        lo, hi = hi, hi * 2
    hi = min(hi, k_max + 1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if predicate(mid * tol):
            lo = mid
        else:
            hi = mid
    return lo


def power_limits(ensemble: Ensemble, horizon: float, *, dt: float = 1.0, tol: float = 1.0,
                 baseline: float | None = None, shape=None) -> tuple[float, float]:
    """(P_minus, P_plus) in kW by one-sided binary search on constant requests.

    P_plus is the largest multiple of ``tol`` such that tracking u = +P_plus
    (times ``shape`` if given) survives ``horizon`` seconds; P_minus likewise
    for u = -c, reported as a non-positive number.
    """
    steps = int(horizon // dt)
    if steps < 1:
        raise ValueError("horizon must cover at least one step")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if baseline is None:
        baseline = baseline_power(ensemble, horizon, dt)
    up_room = ensemble.total_rated_power - baseline + ensemble.rated.max()
    down_room = baseline + ensemble.rated.max()
    k_up = _one_sided_search(lambda c: _survives(ensemble, c, steps, dt, baseline, shape), tol,
                             int(math.ceil(up_room / tol)))
    k_down = _one_sided_search(lambda c: _survives(ensemble, -c, steps, dt, baseline, shape), tol,
                               int(math.ceil(down_room / tol)))
    p_plus = 0.0 if k_up is None else k_up * tol
    p_minus = 0.0 if k_down is None else -k_down * tol
    return p_minus, p_plus


def build_dataset(trajectories, ensemble: Ensemble) -> Dataset:
    """Stack trajectories row-wise into the 2N+3 column layout.

    Efficiency and capacitance columns hold the ensemble mean (constant for a
    homogeneous ensemble).
    """
    n = len(ensemble)
    blocks, provenance, start = [], [], 0
    eta = float(ensemble.efficiency.mean())
    cap = float(ensemble.capacitance.mean())
    for i, traj in enumerate(trajectories):
        if traj.temperatures.shape[1] != n:
            raise DataError(f"trajectory {i} has {traj.temperatures.shape[1]} devices, expected {n}")
        rows = len(traj)
        block = np.empty((rows, 2 * n + 3))
        block[:, :n] = traj.temperatures
        block[:, n:2 * n] = ensemble.setpoint
        block[:, 2 * n] = eta
        block[:, 2 * n + 1] = cap
        block[:, 2 * n + 2] = traj.aggregate
        blocks.append(block)
        provenance.append((traj.signal_id or f"signal{i}", start, start + rows))
        start += rows
    data = np.concatenate(blocks) if blocks else np.empty((0, 2 * n + 3))
    return Dataset(data, n, ensemble.kind, provenance)
