"""Conv + LSTM forecaster of the VB state and its two-step (teacher forced, then closed loop) training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .neural.layers import LSTM, Conv1D, Dense, MaxPool1D
from .neural.network import Network, train


@dataclass
class SupervisedSet:
    """Windows ``X_i = [x_{i-d}..x_i | u_{i-d}..u_i]`` and one-step targets ``Y_i = x_{i+1}``."""
    X: np.ndarray  # (n, 2d+2)
    Y: np.ndarray  # (n,)
    d: int
    dt: float = 1.0

    def __len__(self):
        return len(self.Y)


def make_supervised(x_series, u_series, d: int, dt: float = 1.0) -> SupervisedSet:
    """Sliding windows over aligned state and regulation series.

    Rows with ``i < d`` are left-padded with ``x_0`` and ``u_0``. The last
    sample has no successor, so a series of length N gives N-1 windows.
    """
    x = np.asarray(x_series, dtype=np.float64).ravel()
    u = np.asarray(u_series, dtype=np.float64).ravel()
    if len(x) != len(u):
        raise ValueError(f"state and regulation series differ in length ({len(x)} vs {len(u)})")
    if d < 1:
        raise ValueError("window d must be at least 1")
    if len(x) <= d:
        raise ValueError(f"series of length {len(x)} is too short for window d={d}")
    xp = np.concatenate([np.full(d, x[0]), x])
    up = np.concatenate([np.full(d, u[0]), u])
    n = len(x) - 1
    idx = np.arange(n)[:, None] + np.arange(d + 1)[None, :]
    X = np.concatenate([xp[idx], up[idx]], axis=1)
    return SupervisedSet(X, x[1:].copy(), d, dt)


def build_forecaster(d: int, filters: int = 8, extent: int = 3, units: int = 32, seed: int = 0) -> Network:
    """CONV -> RELU -> POOL -> LSTM -> dense head over a single-channel window of 2d+2 values."""
    length = 2 * d + 2
    rng = np.random.default_rng(seed)
    layers = [
        Conv1D(1, filters, extent, stride=1, padding=(extent - 1) // 2, activation="relu", rng=rng),
        MaxPool1D(2, 2),
        LSTM(filters, units, rng=rng),
        Dense(units, 1, "linear", rng=rng),
    ]
    meta = {"role": "forecaster", "window": d, "x_mean": 0.0, "x_scale": 1.0, "u_mean": 0.0, "u_scale": 1.0}
    return Network(layers, (length, 1), seed, meta)


def window_of(model: Network) -> int:
    return int(model.meta["window"])


def fit_normalization(model: Network, x_series, u_series) -> None:
    """Store the state and regulation location/scale used to normalize model inputs."""
    for name, series in (("x", x_series), ("u", u_series)):
        s = np.asarray(series, dtype=np.float64)
        scale = float(s.std())
        model.meta[f"{name}_mean"] = float(s.mean())
        model.meta[f"{name}_scale"] = scale if scale > 1e-12 else 1.0


def _inputs(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k = X.shape[1] // 2
    m = model.meta
    z = np.empty_like(X)
    z[:, :k] = (X[:, :k] - m["x_mean"]) / m["x_scale"]
    z[:, k:] = (X[:, k:] - m["u_mean"]) / m["u_scale"]
    return z[:, :, None]


def _targets(model, Y):
    return ((np.asarray(Y, dtype=np.float64) - model.meta["x_mean"]) / model.meta["x_scale"]).reshape(-1, 1)


def predict(model: Network, X) -> np.ndarray:
    """One-step predictions in state units for a batch of windows."""
    out = model.forward(_inputs(model, X))[:, 0]
    return out * model.meta["x_scale"] + model.meta["x_mean"]


def _fit(model, X, Y, epochs, lr, batch, seed, stage):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_shape[0]:
        raise ValueError(f"windows of shape {X.shape} do not match model input length {model.input_shape[0]}")
    if epochs <= 0:
        return model, []
    try:
        history = train(model, _inputs(model, X), _targets(model, Y), epochs=epochs, lr=lr, batch=batch, seed=seed)
    except DivergenceError as exc:
        raise DivergenceError(f"forecaster {stage} diverged in epoch {exc.epoch}", exc.epoch) from None
    return model, history


def train_stage1(model: Network, X, Y, *, epochs: int, lr: float = 0.02, batch: int = 32,
                 seed: int = 0) -> tuple[Network, list[float]]:
    """Teacher-forced training on ground-truth windows (in place; returns the model and loss history)."""
    return _fit(model, X, Y, epochs, lr, batch, seed, "stage 1")


def closed_loop_rollout(model: Network, X, Y, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Second-step input construction: windows fed with the model's own past predictions.

    For ``i < d`` the output is the ground truth ``Y[i]``. Beyond that, the
    state slot for time ``tau = i - d + j`` holds ``x_0`` when ``tau <= 0``
    and the earlier prediction ``beta[tau - 1]`` otherwise; regulation slots
    keep their ground-truth values. Returns ``(gamma, beta)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).ravel()
    d = window_of(model) if d is None else d
    if X.shape[1] != 2 * d + 2:
        raise ValueError(f"windows have {X.shape[1]} entries, expected {2 * d + 2}")
    n = len(X)
    gamma = X.copy()
    beta = np.empty(n)
    head = min(d, n)
    beta[:head] = Y[:head]
    x0 = X[0, d]
    for i in range(head, n):
        window = X[i].copy()
        for j in range(d + 1):
            tau = i - d + j
            window[j] = x0 if tau <= 0 else beta[tau - 1]
        gamma[i] = window
        beta[i] = predict(model, window)[0]
    return gamma, beta


def train_stage2(model: Network, gamma, Y, *, epochs: int, lr: float = 0.005, batch: int = 32,
                 seed: int = 0, X=None) -> tuple[Network, list[float]]:
    """Fine-tune the stage-1 model on closed-loop windows ``gamma`` against the true targets.

    When the teacher-forced windows ``X`` are given they are trained on
    alongside ``gamma`` (same targets), so the model keeps seeing clean
    histories while it adapts to its own predictions.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if X is not None:
        gamma = np.concatenate([np.asarray(X, dtype=np.float64), gamma])
        Y = np.concatenate([Y, Y])
    return _fit(model, gamma, Y, epochs, lr, batch, seed + 1, "stage 2")


def forecast(model: Network, x_history, u_future, steps: int, u_history=None) -> np.ndarray:
    """Autoregressive point forecast ``x_{t+1} .. x_{t+steps}``.

    ``x_history`` ends at the current time t; ``u_future[k]`` is the
    regulation applied at time ``t + k``. ``u_history`` (regulation up to
    ``t - 1``) defaults to zeros.
    """
    d = window_of(model)
    x_hist = np.asarray(x_history, dtype=np.float64).ravel()
    u_fut = np.asarray(u_future, dtype=np.float64).ravel()
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return np.empty(0)
    if len(x_hist) < max(d, 1):
        raise ValueError(f"need at least {d} history samples, got {len(x_hist)}")
    if len(u_fut) < steps:
        raise ValueError(f"need {steps} future regulation samples, got {len(u_fut)}")
    if len(x_hist) < d + 1:
        x_hist = np.concatenate([np.full(d + 1 - len(x_hist), x_hist[0]), x_hist])
    u_hist = np.zeros(d) if u_history is None else np.asarray(u_history, dtype=np.float64).ravel()
    if len(u_hist) < d:
        pad = u_hist[0] if len(u_hist) else 0.0
        u_hist = np.concatenate([np.full(d - len(u_hist), pad), u_hist])
    states = list(x_hist[-(d + 1):])
    regs = list(u_hist[len(u_hist) - d:]) if d else []
    out = np.empty(steps)
    for k in range(steps):
        regs.append(u_fut[k])
        window = np.concatenate([states[-(d + 1):], regs[-(d + 1):]])
        out[k] = predict(model, window)[0]
        states.append(out[k])
    return out


def closed_loop_rmse(model: Network, x_series, u_series, d: int | None = None) -> float:
    """RMSE of a free-running rollout from ``x_0`` against the true series."""
    data = make_supervised(x_series, u_series, window_of(model) if d is None else d)
    _, beta = closed_loop_rollout(model, data.X, data.Y, data.d)
    return float(np.sqrt(np.mean((beta - data.Y) ** 2)))
