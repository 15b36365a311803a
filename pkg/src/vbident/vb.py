"""First-order virtual battery model: simulation, parameter extraction and validation.

The model is ``dx/dt = -a x - u`` with energy limits ``C1 <= x <= C2`` and
power limits ``P_minus <= u <= P_plus``. Time is in hours, power in kW and
the state in the units of the autoencoder code (reported as kWh).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, IdentificationError

SCHEMA_VERSION = 1
UNITS = {"a": "1/h", "C1": "kWh", "C2": "kWh", "x0": "kWh", "P_minus": "kW", "P_plus": "kW"}
FIELDS = ("a", "C1", "C2", "x0", "P_minus", "P_plus")


@dataclass
class VBParams:
    a: float
    C1: float
    C2: float
    x0: float
    P_minus: float
    P_plus: float
    provenance: dict = field(default_factory=dict)

    def check(self) -> "VBParams":
        """Raise IdentificationError unless C1 <= x0 <= C2, P_minus <= 0 <= P_plus and a >= 0."""
        values = [getattr(self, k) for k in FIELDS]
        if not all(math.isfinite(v) for v in values):
            raise IdentificationError(f"non-finite parameter in {dict(zip(FIELDS, values))}", "invariants")
        if not self.C1 <= self.x0 <= self.C2:
            raise IdentificationError(f"need C1 <= x0 <= C2, got {self.C1} / {self.x0} / {self.C2}", "invariants")
        if not self.P_minus <= 0 <= self.P_plus:
            raise IdentificationError(f"need P_minus <= 0 <= P_plus, got {self.P_minus} / {self.P_plus}", "invariants")
        if self.a < 0:
            raise IdentificationError(f"dissipation a={self.a} is negative", "invariants")
        return self

    def to_dict(self) -> dict:
        out = {k: float(getattr(self, k)) for k in FIELDS}
        out.update(units=dict(UNITS), provenance=self.provenance, schema_version=SCHEMA_VERSION)
        return out


def save_params(params: VBParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


def load_params(path) -> VBParams:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing parameter file {path}")
    try:
        raw = json.loads(path.read_text())
        return VBParams(**{k: float(raw[k]) for k in FIELDS}, provenance=raw.get("provenance", {}))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a VB parameter file ({exc})") from None


def vb_step(x, a: float, u, dt: float):
    """Exact zero-order-hold step of ``dx/dt = -a x - u`` over ``dt`` hours."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if a == 0:
        return x - u * dt
    gain = -math.expm1(-a * dt)
    return (1.0 - gain) * x - gain / a * u


def simulate(x0: float, a: float, u, dt: float) -> np.ndarray:
    """State trajectory of length ``len(u) + 1`` starting at ``x0``."""
    u = np.asarray(u, dtype=np.float64)
    x = np.empty(len(u) + 1)
    x[0] = x0
    for t, ut in enumerate(u):
        x[t + 1] = vb_step(x[t], a, ut, dt)
    return x


@dataclass
class DissipationFit:
    a: float
    alpha: float
    beta: float
    beta_expected: float
    residual_rmse: float
    relative_residual: float
    beta_consistent: bool
    clamped: bool
    flagged: bool

    def as_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in asdict(self).items()}


def _pairs(x_series, u_series):
    """Stack (x_t, u_t, x_{t+1}) over one series or a list of segments."""
    if isinstance(x_series, np.ndarray) and x_series.ndim == 1 or np.isscalar(x_series[0]):
        x_series, u_series = [x_series], [u_series]
    if len(x_series) != len(u_series):
        raise ValueError("state and regulation segment counts differ")
    cur, reg, nxt = [], [], []
    for x, u in zip(x_series, u_series):
        x = np.asarray(x, dtype=np.float64).ravel()
        u = np.asarray(u, dtype=np.float64).ravel()
        if len(u) < len(x) - 1:
            raise ValueError(f"regulation series of length {len(u)} is shorter than the {len(x) - 1} transitions")
        cur.append(x[:-1])
        reg.append(u[:len(x) - 1])
        nxt.append(x[1:])
    return np.concatenate(cur), np.concatenate(reg), np.concatenate(nxt)


def fit_dissipation(x_series, u_series, dt: float, *, residual_tol: float = 0.1,
                    beta_tol: float = 0.05) -> DissipationFit:
    """Least-squares fit of ``x_{t+1} = alpha x_t + beta u_t`` and ``a = -ln(alpha) / dt``.

    Accepts one series or a list of segments (pairs never straddle segments).
    ``alpha > 1`` is clamped to ``a = 0`` and flagged; ``alpha <= 0`` has no
    physical reading and raises. The fit is flagged when the residual RMSE
    exceeds ``residual_tol`` times the spread of the states. ``beta`` is
    compared with the value ``-(1 - alpha) / a`` the model implies; with the
    code in arbitrary units that check is informational.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, u, y = _pairs(x_series, u_series)
    if len(y) < 2:
        raise DataError("need a series of length >= 3 to fit the dissipation")
    A = np.column_stack([x, u])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    alpha, beta = float(coef[0]), float(coef[1])
    resid = y - A @ coef
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    spread = float(np.std(np.concatenate([x, y[-1:]])))
    rel = rmse / spread if spread > 0 else (0.0 if rmse == 0 else math.inf)
    if not math.isfinite(alpha) or alpha <= 0:
        raise IdentificationError(
            f"fitted alpha={alpha:.6g} (beta={beta:.6g}, residual rmse={rmse:.3g}) has no dissipation reading",
            "dissipation")
    clamped = alpha > 1.0
    a = 0.0 if clamped else max(0.0, -math.log(alpha) / dt)
    beta_expected = -dt if a == 0 else math.expm1(-a * dt) / a
    consistent = abs(beta - beta_expected) <= beta_tol * abs(beta_expected)
    return DissipationFit(a, alpha, beta, beta_expected, rmse, rel, consistent, clamped,
                          clamped or rel > residual_tol)


def energy_limits(trajectories, precision: float | None = None) -> tuple[float, float]:
    """(C1, C2) = envelope of all states, rounded outward to ``precision`` when given."""
    arrays = [np.asarray(t, dtype=np.float64).ravel() for t in trajectories]
    arrays = [a for a in arrays if a.size]
    if not arrays:
        raise DataError("energy limits need at least one non-empty trajectory")
    lo = min(float(a.min()) for a in arrays)
    hi = max(float(a.max()) for a in arrays)
    if precision:
        lo = math.floor(lo / precision) * precision
        hi = math.ceil(hi / precision) * precision
    return lo, hi


def identify_from_series(states, regulations, dt: float, power_limits: tuple[float, float], *,
                         x0: float | None = None, rollouts=None, precision: float | None = None) -> VBParams:
    """Assemble phi from encoded state segments.

    ``states``/``regulations`` are lists of aligned segments (state in code
    units, regulation in kW, ``dt`` in hours). When ``rollouts`` (the
    forecaster's closed-loop predictions of the same segments) are given,
    ``a`` comes from them and the direct fit is reported alongside.
    """
    states = [np.asarray(s, dtype=np.float64).ravel() for s in states]
    if not states or not any(len(s) for s in states):
        raise IdentificationError("no encoded states", "energy_limits")
    try:
        C1, C2 = energy_limits(states, precision)
    except DataError as exc:
        raise IdentificationError(str(exc), "energy_limits") from None
    x0 = float(states[0][0]) if x0 is None else float(x0)
    direct = fit_dissipation(states, regulations, dt)
    provenance = {
        "x0": "autoencoder code of the first dataset row",
        "C1": "minimum code over feasible tracking trajectories",
        "C2": "maximum code over feasible tracking trajectories",
        "P_minus": "largest sustained downward request (binary search)",
        "P_plus": "largest sustained upward request (binary search)",
        "fit_direct": direct.as_dict(),
    }
    if rollouts is not None:
        fit = fit_dissipation(rollouts, regulations, dt)
        provenance["a"] = "least squares on forecaster closed-loop rollouts"
        provenance["fit_rollout"] = fit.as_dict()
    else:
        fit = direct
        provenance["a"] = "least squares on encoded states"
    p_minus, p_plus = power_limits
    return VBParams(fit.a, C1, C2, x0, float(p_minus), float(p_plus), provenance).check()


def identify(ensemble, signals, sae_model, forecaster_model=None, *, horizon: float = 3600.0,
             tol: float = 1.0, precision: float | None = None, workers: int = 1, trajectories=None) -> VBParams:
    """Full pipeline: simulate, encode, roll the forecaster, fit, and search power limits.

    ``signals`` must already be scaled to kW. Upstream errors are re-raised
    as IdentificationError tagged with the failing stage.
    """
    from . import ensemble as ens_mod
    from .forecaster import closed_loop_rollout, make_supervised
    from .sae import encode

    stage = "simulate"
    try:
        dt_s = signals[0].dt if signals else 1.0
        if trajectories is None:
            baseline = ens_mod.baseline_power(ensemble, horizon, dt_s)
            trajectories = ens_mod.simulate_signals(ensemble, signals, baseline, workers)
        dataset = ens_mod.build_dataset(trajectories, ensemble)
        if not len(dataset.data):
            raise DataError("every tracking run failed at its first step")
        stage = "encode"
        codes = encode(sae_model, dataset.data)
        states = [codes[a:b] for _, a, b in dataset.provenance]
        regs = [t.signal for t in trajectories]
        keep = [i for i, s in enumerate(states) if len(s) >= 3]
        rollouts = None
        if forecaster_model is not None:
            stage = "forecast"
            rollouts = []
            d = int(forecaster_model.meta["window"])
            for i in keep:
                sup = make_supervised(states[i], regs[i], d)
                _, beta = closed_loop_rollout(forecaster_model, sup.X, sup.Y, d)
                rollouts.append(np.concatenate([states[i][:1], beta]))
        stage = "power_limits"
        limits = ens_mod.power_limits(ensemble, horizon, dt=dt_s, tol=tol)
        stage = "fit"
        params = identify_from_series([states[i] for i in keep], [regs[i] for i in keep], dt_s / 3600.0, limits,
                                      x0=float(codes[0]), rollouts=rollouts, precision=precision)
    except IdentificationError:
        raise
    except (DataError, ValueError) as exc:
        raise IdentificationError(str(exc), stage) from exc
    params.provenance["horizon_s"] = horizon
    params.provenance["power_tol_kW"] = tol
    params.provenance["n_trajectories"] = len(trajectories)
    return params


def validate(params: VBParams, signal, truth, dt: float) -> dict:
    """Roll the VB forward from ``truth[0]`` under ``signal`` and compare with ``truth``.

    Returns state RMSE and the fraction of truth samples outside [C1, C2].
    """
    truth = np.asarray(truth, dtype=np.float64).ravel()
    u = np.asarray(signal, dtype=np.float64).ravel()[:max(len(truth) - 1, 0)]
    if len(truth) == 0:
        return {"rmse": 0.0, "max_abs_error": 0.0, "violation_fraction": 0.0, "steps": 0}
    pred = simulate(truth[0], params.a, u, dt)[:len(truth)]
    err = pred - truth[:len(pred)]
    outside = (truth < params.C1) | (truth > params.C2)
    return {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "max_abs_error": float(np.abs(err).max()),
        "violation_fraction": float(outside.mean()),
        "steps": int(len(pred)),
    }
