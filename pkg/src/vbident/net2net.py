"""Function-preserving network growth (Net2WiderNet / Net2DeeperNet) and ensemble-resize transfer.

Dense weights are stored as (out, in), so widening layer ``i`` replicates
*rows* of ``W_i`` and *columns* of ``W_{i+1}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural.layers import Dense
from .neural.network import Network

IDEMPOTENT_ACTIVATIONS = ("linear", "relu")


@dataclass(frozen=True)
class WidenPlan:
    layer: int
    old_width: int
    new_width: int
    mapping: np.ndarray  # g: new unit -> old unit, 0-based
    seed: int

    @property
    def counts(self) -> np.ndarray:
        """Replication factor |{x : g(x) = g(j)}| for every new unit j."""
        return np.bincount(self.mapping, minlength=self.old_width)[self.mapping]


def random_mapping(n: int, q: int, seed: int) -> np.ndarray:
    """g(j) = j for j < n, uniform with replacement over [0, n) beyond."""
    if q <= n:
        raise ValueError(f"new width {q} must exceed old width {n}")
    rng = np.random.default_rng(seed)
    return np.concatenate([np.arange(n), rng.integers(0, n, size=q - n)])


def _dense_pair(network: Network, i: int):
    if not 0 <= i < len(network.layers) - 1:
        raise ValueError(f"layer {i} has no successor to absorb the widening")
    a, b = network.layers[i], network.layers[i + 1]
    if not (isinstance(a, Dense) and isinstance(b, Dense)):
        raise ValueError("widening needs two consecutive dense layers")
    return a, b


def widen(network: Network, i: int, q: int, seed: int = 0) -> tuple[Network, WidenPlan]:
    """Widen dense layer ``i`` to ``q`` units without changing the network function."""
    net = network.copy()
    layer, nxt = _dense_pair(net, i)
    n = layer.n_out
    plan = WidenPlan(i, n, q, random_mapping(n, q, seed), seed)
    g = plan.mapping
    layer.params["W"] = layer.params["W"][g, :].copy()
    layer.params["b"] = layer.params["b"][g].copy()
    nxt.params["W"] = nxt.params["W"][:, g] / plan.counts
    net.check_shapes()
    return net, plan


def deepen(network: Network, i: int) -> Network:
    """Insert an identity dense layer after layer ``i``.

    Only valid when the activation satisfies s(I s(v)) = s(v).
    """
    layer = network.layers[i]
    if not isinstance(layer, Dense):
        raise ValueError("only dense layers can be deepened")
    if layer.activation not in IDEMPOTENT_ACTIVATIONS:
        raise ValueError(f"activation {layer.activation!r} violates s(I s(v)) = s(v); cannot deepen")
    net = network.copy()
    width = layer.n_out
    net.layers.insert(i + 1, Dense(width, width, layer.activation, W=np.eye(width), b=np.zeros(width)))
    code = net.meta.get("code_layer")
    if code is not None and i < code:
        net.meta["code_layer"] = code + 1
    net.check_shapes()
    return net


def device_count(input_dim: int) -> int:
    if (input_dim - 3) % 2 or input_dim < 5:
        raise ValueError(f"{input_dim} columns do not follow the 2N+3 layout")
    return (input_dim - 3) // 2


def column_mapping(n_old: int, n_new: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Map every column of the resized 2N+3 layout to a source column.

    Returns ``(column_map, device_map)``. New device k borrows the columns of a
    uniformly sampled existing device in both the temperature and setpoint
    blocks; the three shared columns map to themselves.
    """
    device_map = random_mapping(n_old, n_new, seed)
    column_map = np.concatenate([device_map, n_old + device_map, 2 * n_old + np.arange(3)])
    return column_map, device_map


def expand_rows(rows, column_map: np.ndarray) -> np.ndarray:
    """Rows of the source layout rewritten in the grown layout (new devices duplicate old ones)."""
    return np.asarray(rows, dtype=np.float64)[..., column_map]


def transfer(source: Network, new_input_dim: int, seed: int = 0) -> tuple[Network, dict]:
    """Grow a trained autoencoder to accept and reconstruct ``new_input_dim`` columns.

    The input and output layers are widened (input columns replicated with
    the usual 1/count correction, output units copied); interior layers are
    untouched. Returns the new network and a report of pretrained versus
    newly introduced parameter counts.
    """
    old_dim = source.input_shape[0]
    if new_input_dim < old_dim:
        raise ValueError("shrinking an ensemble is not supported")
    if new_input_dim == old_dim:
        raise ValueError("new input dimension equals the source dimension")
    n_old, n_new = device_count(old_dim), device_count(new_input_dim)
    column_map, device_map = column_mapping(n_old, n_new, seed)
    counts = np.bincount(column_map, minlength=old_dim)
    net = source.copy()
    first, last = net.layers[0], net.layers[-1]
    if not (isinstance(first, Dense) and isinstance(last, Dense)):
        raise ValueError("transfer needs dense input and output layers")
    first.params["W"] = first.params["W"][:, column_map] / counts[column_map]
    last.params["W"] = last.params["W"][column_map, :].copy()
    last.params["b"] = last.params["b"][column_map].copy()
    net.input_shape = (new_input_dim,)
    net.meta = dict(net.meta, n_devices=n_new, transferred_from=old_dim)
    net.check_shapes()
    report = {
        "source_devices": n_old,
        "target_devices": n_new,
        "source_columns": old_dim,
        "target_columns": new_input_dim,
        "pretrained_parameters": source.n_params,
        "untrained_parameters": net.n_params - source.n_params,
        "total_parameters": net.n_params,
        "device_map": device_map.tolist(),
        "seed": seed,
    }
    return net, report
