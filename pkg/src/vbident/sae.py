"""Stacked linear autoencoder whose scalar bottleneck is the virtual-battery state."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .neural.layers import Dense
from .neural.network import Network, train

log = logging.getLogger(__name__)

REFERENCE_WIDTHS = (203, 150, 100, 50, 20, 1)


def sae_widths(input_dim: int) -> list[int]:
    """Encoder widths for ``input_dim`` inputs, ending in the width-1 code.

    The 203-input reference schedule is rescaled proportionally and rounded;
    hidden widths that would not shrink strictly towards the code are dropped.
    """
    if input_dim < 2:
        raise ValueError("input_dim must be at least 2")
    widths = [input_dim]
    for w in REFERENCE_WIDTHS[1:-1]:
        scaled = int(round(w * input_dim / REFERENCE_WIDTHS[0]))
        if 1 < scaled < widths[-1]:
            widths.append(scaled)
    if len(widths) == 1 and input_dim > 2:
        widths.append(max(2, input_dim // 2))
    return widths + [1]


def build_sae(input_dim: int, hidden: list[int] | None = None, seed: int = 0) -> Network:
    """All-linear symmetric autoencoder ``input_dim - hidden... - 1 - ...hidden - input_dim``."""
    encoder = sae_widths(input_dim) if hidden is None else [input_dim, *hidden, 1]
    if encoder[-1] != 1 or any(a <= b for a, b in zip(encoder[:-1], encoder[1:])):
        raise ValueError(f"encoder widths must shrink strictly to 1, got {encoder}")
    widths = encoder + encoder[-2::-1]
    rng = np.random.default_rng(seed)
    layers = [Dense(a, b, "linear", rng=rng) for a, b in zip(widths[:-1], widths[1:])]
    return Network(layers, (input_dim,), seed, meta={"role": "sae", "code_layer": len(encoder) - 2})


def widths_of(network: Network) -> list[int]:
    return [network.layers[0].n_in] + [layer.n_out for layer in network.layers]


def code_index(network: Network) -> int:
    """Index of the layer whose output is the scalar code."""
    return int(network.meta["code_layer"])


def encode(network: Network, rows) -> np.ndarray | float:
    """Bottleneck output for one row (returns a float) or a batch (returns a vector)."""
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    batch = rows[None] if single else rows
    if batch.shape[1] != network.input_shape[0]:
        raise ValueError(f"row width {batch.shape[1]} does not match network input {network.input_shape[0]}")
    code = network.forward(batch, upto=code_index(network) + 1)[:, 0]
    return float(code[0]) if single else code


def decode(network: Network, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    single = codes.ndim == 0
    batch = codes.reshape(-1, 1)
    out = network.forward(batch, start=code_index(network) + 1)
    return out[0] if single else out


@dataclass
class VbStateSeries:
    dt: float
    values: np.ndarray
    provenance: list = field(default_factory=list)  # (signal_id, start_row, stop_row)

    def segments(self):
        for signal_id, start, stop in self.provenance:
            yield signal_id, self.values[start:stop]


def encode_dataset(network: Network, dataset, dt: float = 1.0) -> VbStateSeries:
    return VbStateSeries(dt, encode(network, dataset.data), list(dataset.provenance))


def center_biases(network: Network, data) -> None:
    """Data-dependent bias initialization.

    The first layer's bias cancels the data mean (``b1 = -W1 mean``) and the
    output bias reproduces it, so an untrained net starts at the mean-only
    reconstruction. Inputs themselves stay raw.
    """
    mean = np.asarray(data, dtype=np.float64).mean(axis=0)
    first, last = network.layers[0], network.layers[-1]
    first.params["b"] = -first.params["W"] @ mean
    last.params["b"] = mean.copy()


def recenter(network: Network, data) -> None:
    """Move the mean of every hidden activation into the next layer's bias.

    For linear layers this leaves the network function unchanged while
    keeping hidden activations zero-mean on ``data``, which is what the
    inner step size assumes.
    """
    h = np.asarray(data, dtype=np.float64)
    for layer, nxt in zip(network.layers[:-1], network.layers[1:]):
        if layer.activation != "linear":
            raise ValueError("recentering requires linear layers")
        h = layer.forward(h)[0]
        shift = h.mean(axis=0)
        layer.params["b"] = layer.params["b"] - shift
        nxt.params["b"] = nxt.params["b"] + nxt.params["W"] @ shift
        h = h - shift


def refit_output_bias(network: Network, data) -> None:
    """Shift the output bias so the mean reconstruction equals the data mean.

    This is the exact least-squares bias for the current weights. After a
    transfer the decoder still reproduces the source ensemble's mean, which
    is most of the initial loss on the grown ensemble.
    """
    data = np.asarray(data, dtype=np.float64)
    network.layers[-1].params["b"] += (data - network.forward(data)).mean(axis=0)


def step_sizes(network: Network, data, lr: float) -> np.ndarray:
    """Per-layer SGD step sizes for raw (un-normalized) inputs.

    The input layer sees the raw rows, whose second moment is dominated by
    the mean; every other layer sees first-layer activations. Each group
    gets ``lr`` divided by the mean squared norm of its input.
    """
    data = np.asarray(data, dtype=np.float64)
    raw = float(np.mean(np.sum(data * data, axis=1)))
    hidden = network.forward(data, upto=1)
    inner = float(np.mean(np.sum(hidden * hidden, axis=1)))
    rates = np.full(len(network.layers), lr / max(inner, 1e-12))
    rates[0] = lr / max(raw, 1e-12)
    return rates


def train_sae(network: Network, data, *, epochs: int, lr: float = 0.2, batch: int = 64, seed: int = 0,
              pretrain_epochs: int | None = None, target_loss: float | None = None,
              checks_per_epoch: int = 1) -> tuple[Network, list[float]]:
    """Train the autoencoder on raw rows by mini-batch SGD on reconstruction MSE.

    ``lr`` is a dimensionless rate turned into per-layer step sizes by
    :func:`step_sizes`. A network that has never been trained first gets
    centred biases (:func:`center_biases`) and, when ``pretrain_epochs`` is
    set, greedy layerwise pretraining: that many epochs per encoder/decoder
    pair, each pair reconstructing the codes of the layers below it. Then the
    whole stack is fine-tuned. Pretraining is off by default; on the data
    sets tried here end-to-end training from centred biases was faster and
    more stable. The returned history covers the fine-tuning epochs.
    With ``target_loss`` training stops at the first epoch reaching it.
    """
    data = getattr(data, "data", data)
    data = np.asarray(data, dtype=np.float64)
    if data.shape[1] != network.input_shape[0]:
        raise ValueError(f"dataset has {data.shape[1]} columns, network expects {network.input_shape[0]}")
    if epochs <= 0:
        return network, []
    fresh = not network.meta.get("trained", False)
    if fresh:
        center_biases(network, data)
        if pretrain_epochs:
            _pretrain(network, data, pretrain_epochs, lr, batch, seed)
    stop = None if target_loss is None else (lambda epoch, loss: loss <= target_loss)
    recenter(network, data)
    refit_output_bias(network, data)
    rates = step_sizes(network, data, lr)
    history = _fit(network, data, rates, epochs, batch, seed + 1, "autoencoder training", callback=stop,
                   checks_per_epoch=checks_per_epoch)
    network.meta["trained"] = True
    return network, history


MAX_BACKOFFS = 4


def _fit(network, data, rates, epochs, batch, seed, what, **kwargs):
    """SGD with step-size backoff: on divergence restore the weights, halve every rate and retry."""
    snapshot = [p.copy() for _, p in network.named_params()]
    for attempt in range(MAX_BACKOFFS + 1):
        try:
            history = train(network, data, data, epochs=epochs, lr=rates, batch=batch, seed=seed, **kwargs)
        except DivergenceError as exc:
            if attempt == MAX_BACKOFFS:
                raise DivergenceError(f"{what} diverged in epoch {exc.epoch} after {attempt} step-size halvings",
                                      exc.epoch) from None
            for (_, p), saved in zip(network.named_params(), snapshot):
                p[...] = saved
            rates = np.asarray(rates) / 2
            log.warning("%s diverged in epoch %s; retrying with halved step sizes", what, exc.epoch)
            network.meta["backoffs"] = network.meta.get("backoffs", 0) + 1
            continue
        return history


def _pretrain(network, data, epochs, lr, batch, seed):
    n_pairs = code_index(network) + 1
    last = len(network.layers) - 1
    codes = data
    for k in range(n_pairs):
        pair = Network([network.layers[k], network.layers[last - k]], (network.layers[k].n_in,), seed)
        center_biases(pair, codes)
        rates = step_sizes(pair, codes, lr)
        _fit(pair, codes, rates, epochs, batch, seed + 100 + k, f"pretraining pair {k}")
        network.meta["backoffs"] = network.meta.get("backoffs", 0) + pair.meta.get("backoffs", 0)
        codes = pair.forward(codes, upto=1)


def reconstruction_errors(network: Network, data, temperature_block: slice, bins: int = 50,
                          max_rows: int | None = None, seed: int = 0) -> dict:
    """Signed per-device reconstruction errors (degF) on the temperature columns.

    Returns the error matrix (rows x devices), per-device min/max and a
    histogram over all entries. ``max_rows`` subsamples rows reproducibly.
    """
    data = np.asarray(getattr(data, "data", data), dtype=np.float64)
    if max_rows is not None and len(data) > max_rows:
        idx = np.sort(np.random.default_rng(seed).choice(len(data), max_rows, replace=False))
        data = data[idx]
    errors = network.forward(data)[:, temperature_block] - data[:, temperature_block]
    lo, hi = float(errors.min()), float(errors.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(errors, bins=bins, range=(lo, hi))
    return {
        "errors": errors,
        "device_min": errors.min(axis=0),
        "device_max": errors.max(axis=0),
        "hist_counts": counts,
        "hist_edges": edges,
        "min": float(errors.min()),
        "max": float(errors.max()),
    }


def pca_floor(data, rank: int = 1) -> float:
    """Smallest reconstruction MSE any rank-``rank`` affine map can reach on ``data``.

    A linear autoencoder with a width-``rank`` bottleneck cannot beat this,
    which makes it the natural yardstick for a target loss.
    """
    data = np.asarray(getattr(data, "data", data), dtype=np.float64)
    s = np.linalg.svd(data - data.mean(axis=0), compute_uv=False)
    return float(np.sum(s[rank:] ** 2) / data.size)
