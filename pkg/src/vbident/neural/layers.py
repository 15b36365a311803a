"""Trainable layers with explicit forward caches and reverse-mode backward passes."""
from __future__ import annotations

import math

import numpy as np

from . import functional as F


def glorot(rng, shape, fan_in, fan_out):
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def spec(self) -> dict:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x):
        """Return ``(y, cache)``."""
        raise NotImplementedError

    def backward(self, dy, cache):
        """Return ``(dx, grads)`` where ``grads`` mirrors ``params``."""
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class Dense(Layer):
    """Fully connected layer y = s(W x + b); inputs with extra axes are flattened."""

    kind = "dense"

    def __init__(self, n_in, n_out, activation="linear", rng=None, W=None, b=None):
        super().__init__()
        if activation not in F.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        if W is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            W = glorot(rng, (n_out, n_in), n_in, n_out)
        self.params["W"] = np.array(W, dtype=np.float64)
        self.params["b"] = np.zeros(n_out) if b is None else np.array(b, dtype=np.float64)
        if self.params["W"].shape != (n_out, n_in) or self.params["b"].shape != (n_out,):
            raise ValueError("dense weight shapes do not match (n_out, n_in)")

    @property
    def n_in(self):
        return self.params["W"].shape[1]

    @property
    def n_out(self):
        return self.params["W"].shape[0]

    def spec(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}

    def output_shape(self, input_shape):
        if math.prod(input_shape) != self.n_in:
            raise ValueError(f"dense layer expects {self.n_in} inputs, got shape {input_shape}")
        return (self.n_out,)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        a = flat @ self.params["W"].T + self.params["b"]
        y = F.activate(a, self.activation)
        return y, (x.shape, flat, a, y)

    def backward(self, dy, cache):
        shape, flat, a, y = cache
        da = dy if self.activation == "linear" else dy * F.activation_grad(a, y, self.activation)
        grads = {"W": da.T @ flat, "b": da.sum(axis=0)}
        dx = (da @ self.params["W"]).reshape(shape)
        return dx, grads


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, n_channels, n_filters, extent, stride=1, padding=0, activation="linear", rng=None,
                 W=None, b=None):
        super().__init__()
        if stride < 1 or extent < 1 or padding < 0:
            raise ValueError("stride and extent must be >= 1, padding >= 0")
        self.stride, self.padding, self.activation = stride, padding, activation
        if W is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            W = glorot(rng, (n_filters, extent, n_channels), extent * n_channels, extent * n_filters)
        self.params["W"] = np.array(W, dtype=np.float64)
        self.params["b"] = np.zeros(n_filters) if b is None else np.array(b, dtype=np.float64)

    @property
    def extent(self):
        return self.params["W"].shape[1]

    def spec(self):
        k, f, d = self.params["W"].shape
        return {"kind": "conv1d", "n_channels": d, "n_filters": k, "extent": f, "stride": self.stride,
                "padding": self.padding, "activation": self.activation}

    def output_shape(self, input_shape):
        length, channels = input_shape
        if channels != self.params["W"].shape[2]:
            raise ValueError(f"conv expects {self.params['W'].shape[2]} channels, got {channels}")
        return (F.conv1d_output_length(length, self.extent, self.stride, self.padding), self.params["W"].shape[0])

    def forward(self, x):
        win = F.conv_windows(x, self.extent, self.stride, self.padding)
        a = np.einsum("bhdf,kfd->bhk", win, self.params["W"]) + self.params["b"]
        y = F.activate(a, self.activation)
        return y, (x.shape, win, a, y)

    def backward(self, dy, cache):
        shape, win, a, y = cache
        da = dy if self.activation == "linear" else dy * F.activation_grad(a, y, self.activation)
        grads = {"W": np.einsum("bhdf,bhk->kfd", win, da), "b": da.sum(axis=(0, 1))}
        batch, length, channels = shape
        h2 = da.shape[1]
        s, p = self.stride, self.padding
        dxp = np.zeros((batch, length + 2 * p, channels))
        for f in range(self.extent):
            dxp[:, f:f + s * (h2 - 1) + 1:s, :] += da @ self.params["W"][:, f, :]
        return dxp[:, p:p + length, :], grads


class MaxPool1D(Layer):
    """Max pooling along the length axis; has no parameters."""

    kind = "pool"

    def __init__(self, extent=2, stride=2):
        super().__init__()
        if stride < 1 or extent < 1:
            raise ValueError("stride and extent must be >= 1")
        self.extent, self.stride = extent, stride

    def spec(self):
        return {"kind": "pool", "extent": self.extent, "stride": self.stride}

    def output_shape(self, input_shape):
        length, channels = input_shape
        return (F.pool_output_length(length, self.extent, self.stride), channels)

    def forward(self, x):
        F.pool_output_length(x.shape[1], self.extent, self.stride)
        win = np.lib.stride_tricks.sliding_window_view(x, self.extent, axis=1)[:, ::self.stride]
        arg = win.argmax(axis=-1)
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, dy, cache):
        shape, arg = cache
        dx = np.zeros(shape)
        h3, s = dy.shape[1], self.stride
        for f in range(self.extent):
            dx[:, f:f + s * (h3 - 1) + 1:s, :] += dy * (arg == f)
        return dx, {}


class LSTM(Layer):
    """Peephole LSTM over a (B, T, D) sequence, returning the last hidden state (B, N)."""

    kind = "lstm"

    def __init__(self, n_in, units, rng=None, params=None):
        super().__init__()
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {
                "Wx": glorot(rng, (4 * units, n_in), n_in, units),
                "Wh": glorot(rng, (4 * units, units), units, units),
                "wc": glorot(rng, (3, units), units, units),
                "b": np.zeros(4 * units),
            }
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        if self.params["Wx"].shape != (4 * units, n_in) or self.params["Wh"].shape != (4 * units, units):
            raise ValueError("lstm weight shapes inconsistent with unit count")

    @property
    def units(self):
        return self.params["Wh"].shape[1]

    def spec(self):
        return {"kind": "lstm", "n_in": self.params["Wx"].shape[1], "units": self.units}

    def output_shape(self, input_shape):
        if input_shape[-1] != self.params["Wx"].shape[1]:
            raise ValueError(f"lstm expects {self.params['Wx'].shape[1]} features, got {input_shape[-1]}")
        return (self.units,)

    def forward(self, x):
        batch, steps, _ = x.shape
        n = self.units
        h = np.zeros((batch, n))
        c = np.zeros((batch, n))
        xw = x @ self.params["Wx"].T  # (B, T, 4N)
        cache = []
        for t in range(steps):
            pre = xw[:, t] + h @ self.params["Wh"].T + self.params["b"]
            wc = self.params["wc"]
            i = F.sigmoid(pre[:, :n] + wc[0] * c)
            f = F.sigmoid(pre[:, n:2 * n] + wc[1] * c)
            z = np.tanh(pre[:, 2 * n:3 * n])
            c_new = f * c + i * z
            o = F.sigmoid(pre[:, 3 * n:] + wc[2] * c)
            tc = np.tanh(c_new)
            cache.append((h, c, i, f, z, o, tc))
            h, c = o * tc, c_new
        return h, (x, cache)

    def backward(self, dy, cache):
        x, steps = cache
        n = self.units
        Wx, Wh, wc = self.params["Wx"], self.params["Wh"], self.params["wc"]
        g = {k: np.zeros_like(v) for k, v in self.params.items()}
        dpre_all = np.empty(x.shape[:2] + (4 * n,))
        dh = dy
        dc = np.zeros_like(dy)
        for t in range(len(steps) - 1, -1, -1):
            h_prev, c_prev, i, f, z, o, tc = steps[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dpo = do * o * (1.0 - o)
            di = dc * z
            df = dc * c_prev
            dz = dc * i
            dpi = di * i * (1.0 - i)
            dpf = df * f * (1.0 - f)
            dpz = dz * (1.0 - z * z)
            dpre = np.concatenate([dpi, dpf, dpz, dpo], axis=1)
            dpre_all[:, t] = dpre
            g["wc"][0] += (dpi * c_prev).sum(axis=0)
            g["wc"][1] += (dpf * c_prev).sum(axis=0)
            g["wc"][2] += (dpo * c_prev).sum(axis=0)
            g["Wh"] += dpre.T @ h_prev
            dh = dpre @ Wh
            dc = dc * f + dpi * wc[0] + dpf * wc[1] + dpo * wc[2]
        g["Wx"] = np.einsum("btg,btd->gd", dpre_all, x)
        g["b"] = dpre_all.sum(axis=(0, 1))
        dx = dpre_all @ Wx
        return dx, g


LAYER_TYPES = {"dense": Dense, "conv1d": Conv1D, "pool": MaxPool1D, "lstm": LSTM}


def layer_from_spec(spec: dict, params: dict | None = None, rng=None) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        layer = Dense(spec["n_in"], spec["n_out"], spec.get("activation", "linear"), rng=rng)
    elif kind == "conv1d":
        layer = Conv1D(spec["n_channels"], spec["n_filters"], spec["extent"], spec.get("stride", 1),
                       spec.get("padding", 0), spec.get("activation", "linear"), rng=rng)
    elif kind == "pool":
        layer = MaxPool1D(spec["extent"], spec["stride"])
    elif kind == "lstm":
        layer = LSTM(spec["n_in"], spec["units"], rng=rng)
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    if params is not None:
        for name, value in params.items():
            if layer.params[name].shape != value.shape:
                raise ValueError(f"{kind} parameter {name}: shape {value.shape} != {layer.params[name].shape}")
            layer.params[name] = np.array(value, dtype=np.float64)
    return layer
