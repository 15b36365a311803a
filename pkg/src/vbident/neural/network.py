"""Sequential network, squared-error backward pass, SGD and a gradient checker."""
from __future__ import annotations

import copy
import logging

import numpy as np

from ..errors import DivergenceError
from .layers import Dense, Layer, layer_from_spec

log = logging.getLogger(__name__)


class Network:
    """Ordered stack of layers.

    ``meta`` carries model-level annotations (e.g. which layer is the
    autoencoder bottleneck) and is saved alongside the weights.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple, seed: int = 0, meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.meta = dict(meta or {})
        self.check_shapes()

    def check_shapes(self) -> tuple:
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    @property
    def output_shape(self):
        return self.check_shapes()

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def named_params(self):
        for idx, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{idx}.{name}", value

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def forward(self, x, upto: int | None = None, start: int = 0):
        """Apply layers ``start .. upto-1`` to a batch."""
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers[start:upto]:
            x, _ = layer.forward(x)
        return x

    __call__ = forward

    def loss_and_grads(self, x, target, scale: float = 1.0):
        """Mean squared error over all output entries and its exact gradients.

        Returns ``(loss, grads)`` with ``grads`` a list of per-layer dicts.
        """
        out = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        if not np.all(np.isfinite(out)):
            raise DivergenceError("non-finite activations in forward pass")
        diff = out - np.asarray(target, dtype=np.float64).reshape(out.shape)
        loss = scale * float(np.mean(diff * diff))
        dy = (2.0 * scale / diff.size) * diff
        grads = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            dy, grads[k] = self.layers[k].backward(dy, caches[k])
        return loss, grads

    def loss(self, x, target) -> float:
        diff = self.forward(x) - np.asarray(target, dtype=np.float64).reshape(-1, *self.output_shape)
        return float(np.mean(diff * diff))

    def spec(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "layers": [layer.spec() for layer in self.layers],
            "meta": self.meta,
        }

    @classmethod
    def from_spec(cls, spec: dict, params: dict | None = None) -> "Network":
        rng = np.random.default_rng(spec.get("seed", 0))
        layers = []
        for idx, layer_spec in enumerate(spec["layers"]):
            own = None
            if params is not None:
                prefix = f"{idx}."
                own = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
            layers.append(layer_from_spec(layer_spec, own, rng))
        return cls(layers, tuple(spec["input_shape"]), spec.get("seed", 0), spec.get("meta"))


def sgd_step(network: Network, grads, lr) -> None:
    """In-place update theta <- theta - lr * grad.

    ``lr`` is a scalar or one step size per layer.
    """
    rates = np.broadcast_to(np.asarray(lr, dtype=np.float64), (len(network.layers),))
    if np.any(rates <= 0):
        raise ValueError("learning rate must be positive")
    for layer, g, rate in zip(network.layers, grads, rates):
        for name, value in g.items():
            layer.params[name] -= rate * value


def train(network: Network, X, Y, *, epochs: int, lr, batch: int = 32, seed: int = 0,
          eval_every: int = 1, callback=None, checks_per_epoch: int = 1) -> list[float]:
    """Seeded mini-batch SGD on mean squared error.

    Returns the full-data loss after each epoch, or after each of
    ``checks_per_epoch`` equal slices of an epoch. ``callback(epoch, loss)``
    returning True stops training early; ``epoch`` is fractional when an
    epoch is checked more than once.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = len(X)
    if n != len(Y):
        raise ValueError("X and Y must have the same number of rows")
    if checks_per_epoch < 1:
        raise ValueError("checks_per_epoch must be at least 1")
    rng = np.random.default_rng(seed)
    starts = list(range(0, n, batch))
    marks = {int(np.ceil(len(starts) * (j + 1) / checks_per_epoch)) - 1: j for j in range(checks_per_epoch)}
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for step, start in enumerate(starts):
            idx = order[start:start + batch]
            try:
                loss, grads = network.loss_and_grads(X[idx], Y[idx])
            except DivergenceError:
                raise DivergenceError(f"training diverged in epoch {epoch}", epoch) from None
            if not np.isfinite(loss):
                raise DivergenceError(f"training diverged in epoch {epoch}", epoch)
            sgd_step(network, grads, lr)
            if step not in marks:
                continue
            if checks_per_epoch == 1 and (epoch + 1) % eval_every and epoch != epochs - 1:
                continue
            loss = network.loss(X, Y)
            if not np.isfinite(loss):
                raise DivergenceError(f"training diverged in epoch {epoch}", epoch)
            history.append(loss)
            at = epoch + (marks[step] + 1) / checks_per_epoch
            log.debug("epoch %.3g loss %.6g", at, loss)
            if callback is not None and callback(at if checks_per_epoch > 1 else epoch, loss):
                return history
    return history


def grad_check(network: Network, x, target, step: float = 1e-6, floor: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error per entry is |a - n| / max(|a|, |n|, floor); the floor
    keeps entries whose true gradient is zero from dividing by round-off.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = network.loss_and_grads(x, target)
    worst = 0.0
    for layer, g in zip(network.layers, grads):
        for name, value in layer.params.items():
            analytic = g[name]
            flat = value.reshape(-1)
            numeric = np.empty(flat.size)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = network.loss(x, target)
                flat[j] = orig - step
                down = network.loss(x, target)
                flat[j] = orig
                numeric[j] = (up - down) / (2 * step)
            a = analytic.reshape(-1)
            rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
            worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def lipschitz_estimate(X, iterations: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of X^T X / n by power iteration."""
    X = np.asarray(X, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    lam = 0.0
    for _ in range(iterations):
        w = X.T @ (X @ v) / len(X)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def dense_stack(widths, activation="linear", seed=0, meta=None) -> Network:
    rng = np.random.default_rng(seed)
    layers = [Dense(a, b, activation, rng=rng) for a, b in zip(widths[:-1], widths[1:])]
    return Network(layers, (widths[0],), seed, meta)
