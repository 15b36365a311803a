"""Stateless forward operations and shape arithmetic.

Batched arrays use the layout ``(batch, length, channels)`` for sequences and
``(batch, features)`` for vectors. All arithmetic is float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("linear", "sigmoid", "tanh", "relu")


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def activate(a, kind: str):
    if kind == "linear":
        return a
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(a, y, kind: str):
    """Derivative of the activation at pre-activation ``a`` (``y`` = activate(a))."""
    if kind == "linear":
        return np.ones_like(a)
    if kind == "relu":
        return (a > 0).astype(a.dtype)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    raise ValueError(f"unknown activation {kind!r}")


def dense_forward(x, W, b, activation="linear"):
    """s(W x + b) for a vector ``x`` or a batch of row vectors.

    ``W`` has shape (out, in).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return activate(x @ W.T + b, activation)


def conv1d_output_length(length: int, extent: int, stride: int, padding: int) -> int:
    span = length - extent + 2 * padding
    if stride < 1 or extent < 1 or padding < 0:
        raise ValueError("stride and extent must be >= 1, padding >= 0")
    if span < 0 or span % stride:
        raise ValueError(
            f"invalid convolution: (H1 - F + 2P) = {span} is not a non-negative multiple of stride {stride}"
        )
    return span // stride + 1


def pool_output_length(length: int, extent: int, stride: int) -> int:
    span = length - extent
    if stride < 1 or extent < 1:
        raise ValueError("stride and extent must be >= 1")
    if span < 0 or span % stride:
        raise ValueError(f"invalid pooling: (H2 - F) = {span} is not a non-negative multiple of stride {stride}")
    return span // stride + 1


def conv_windows(x, extent, stride, padding):
    """Receptive fields of a (B, H, D) input as a (B, H2, D, F) view."""
    conv1d_output_length(x.shape[1], extent, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (0, 0)))
    return sliding_window_view(x, extent, axis=1)[:, ::stride]


def conv1d_forward(x, filters, bias, stride=1, padding=0, activation="linear"):
    """One-dimensional convolution of a (B, H1, D1) volume.

    ``filters`` has shape (K, F, D1) and ``bias`` shape (K,); the result has
    shape (B, H2, K) with H2 = (H1 - F + 2P)/S + 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or filters.ndim != 3 or filters.shape[2] != x.shape[2]:
        raise ValueError(f"shape mismatch: input {x.shape}, filters {filters.shape}")
    win = conv_windows(x, filters.shape[1], stride, padding)
    return activate(np.einsum("bhdf,kfd->bhk", win, filters) + bias, activation)


def pool_forward(x, extent=2, stride=2):
    """Max pooling along the length axis of a (B, H2, D) volume."""
    x = np.asarray(x, dtype=np.float64)
    pool_output_length(x.shape[1], extent, stride)
    return sliding_window_view(x, extent, axis=1)[:, ::stride].max(axis=-1)


def lstm_step(params, x_t, h_prev, c_prev):
    """One peephole LSTM step; returns (h_t, c_t, gates).

    ``params`` holds ``Wx`` (4N, D), ``Wh`` (4N, N), ``wc`` (3, N) and ``b``
    (4N,), with rows ordered input, forget, candidate, output. Peepholes for
    all three gates read the previous cell state.
    """
    Wx, Wh, wc, b = params["Wx"], params["Wh"], params["wc"], params["b"]
    n = Wh.shape[1]
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != Wx.shape[1]:
        raise ValueError(f"input width {x_t.shape[-1]} does not match cell input {Wx.shape[1]}")
    pre = x_t @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(pre[..., :n] + wc[0] * c_prev)
    f = sigmoid(pre[..., n:2 * n] + wc[1] * c_prev)
    z = np.tanh(pre[..., 2 * n:3 * n])
    c = f * c_prev + i * z
    o = sigmoid(pre[..., 3 * n:] + wc[2] * c_prev)
    h = o * np.tanh(c)
    return h, c, (i, f, z, o)
