"""Small feedforward networks with exact per-sample gradients and Jacobians.

Parameters live in one flat vector. Layer ``r`` owns the contiguous block
``[W_r (row-major, out x in), b_r]``; that block is what layerwise clipping
and the per-layer NTK refer to as ``w_r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from clipflow import rng

ACTIVATIONS = ("identity", "relu", "tanh")
LOSSES = ("mse", "softmax_cross_entropy")
JACOBIAN_CAP = 50_000_000


class NetworkError(ValueError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        # subgradient at 0 is 0
        return (z > 0.0).astype(float)
    return 1.0 - a * a


@dataclass(frozen=True)
class Network:
    sizes: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise NetworkError("a network needs at least an input and an output size")
        if len(self.activations) != len(self.sizes) - 1:
            raise NetworkError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise NetworkError(f"unknown activation {a!r}")
        p = np.asarray(self.params, dtype=float)
        if p.shape != (self.n_params,):
            raise NetworkError(f"expected {self.n_params} parameters, got {p.shape}")
        object.__setattr__(self, "params", p)

    @classmethod
    def init(cls, sizes, activations, seed: int = 0) -> "Network":
        """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
        sizes = tuple(int(s) for s in sizes)
        gen = rng.generator(seed, 0, "init")
        blocks = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            blocks.append(gen.standard_normal(fan_out * fan_in) / np.sqrt(fan_in))
            blocks.append(np.zeros(fan_out))
        return cls(sizes, tuple(activations), np.concatenate(blocks))

    @cached_property
    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            stop = start + fan_out * (fan_in + 1)
            out.append(slice(start, stop))
            start = stop
        return out

    @property
    def n_params(self) -> int:
        return sum(o * (i + 1) for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def weight(self, r: int) -> np.ndarray:
        fan_in, fan_out = self.sizes[r], self.sizes[r + 1]
        start = self.layer_slices[r].start
        return self.params[start:start + fan_in * fan_out].reshape(fan_out, fan_in)

    def bias(self, r: int) -> np.ndarray:
        return self.params[self.layer_slices[r].stop - self.sizes[r + 1]:self.layer_slices[r].stop]

    def with_params(self, params) -> "Network":
        return Network(self.sizes, self.activations, np.array(params, dtype=float))

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(tuple(d["sizes"]), tuple(d["activations"]), np.array(d["params"], dtype=float))


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    classification: bool = False

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
            raise NetworkError(f"inputs ({x.shape[0]}) and targets ({y.shape[0]}) disagree")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NetworkError("batch has non-finite entries")
        if self.classification and not np.allclose(y.sum(axis=1), 1.0):
            raise NetworkError("classification targets must be one-hot rows")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.targets, axis=1)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=int)
        return Batch(self.inputs[idx], self.targets[idx], self.classification)


@dataclass(frozen=True)
class PerSampleGrads:
    """Per-sample flat gradients (n x P), per-sample losses and layer layout."""

    flat: np.ndarray
    losses: np.ndarray
    layer_slices: list[slice] = field(repr=False)

    @property
    def n(self) -> int:
        return self.flat.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layer_slices)

    def layer(self, r: int) -> np.ndarray:
        return self.flat[:, self.layer_slices[r]]

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.flat * self.flat, axis=1))

    def layer_norms(self) -> np.ndarray:
        """(n, d) array of per-sample, per-layer gradient norms."""
        return np.stack(
            [np.sqrt(np.sum(self.layer(r) ** 2, axis=1)) for r in range(self.n_layers)],
            axis=1,
        )

    def replace(self, flat: np.ndarray) -> "PerSampleGrads":
        return PerSampleGrads(flat, self.losses, self.layer_slices)


def ordered_sum(rows: np.ndarray) -> np.ndarray:
    """Sum of rows accumulated strictly in ascending row index."""
    total = np.zeros(rows.shape[1:])
    for row in rows:
        total += row
    return total


def _check(net: Network, batch: Batch) -> None:
    if batch.inputs.shape[1] != net.sizes[0]:
        raise NetworkError(f"input dim {batch.inputs.shape[1]} != network input {net.sizes[0]}")
    if batch.targets.shape[1] != net.output_dim:
        raise NetworkError(f"target dim {batch.targets.shape[1]} != network output {net.output_dim}")
    if not np.all(np.isfinite(net.params)):
        raise NetworkError("network has non-finite parameters")


def _forward_cache(net: Network, x: np.ndarray):
    acts, pre = [x], []
    a = x
    for r in range(net.n_layers):
        z = a @ net.weight(r).T + net.bias(r)
        a = _act(net.activations[r], z)
        pre.append(z)
        acts.append(a)
    return acts, pre


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def predict(net: Network, inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != net.sizes[0]:
        raise NetworkError(f"input dim {x.shape[1]} != network input {net.sizes[0]}")
    return _forward_cache(net, x)[0][-1]


def forward(net: Network, batch: Batch) -> tuple[np.ndarray, np.ndarray | None]:
    """Predictions ``f`` (n x out) and, for classification, softmax probabilities."""
    _check(net, batch)
    f = _forward_cache(net, batch.inputs)[0][-1]
    return f, (softmax(f) if batch.classification else None)


def per_sample_loss(f: np.ndarray, targets: np.ndarray, loss: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and their derivatives with respect to the predictions."""
    if loss == "mse":
        diff = f - targets
        return np.sum(diff * diff, axis=1), 2.0 * diff
    if loss == "softmax_cross_entropy":
        logp = log_softmax(f)
        return -np.sum(targets * logp, axis=1), softmax(f) - targets
    raise NetworkError(f"unknown loss {loss!r}")


def mean_loss(net: Network, batch: Batch, loss: str) -> float:
    f, _ = forward(net, batch)
    losses, _ = per_sample_loss(f, batch.targets, loss)
    return float(ordered_sum(losses[:, None])[0] / len(batch))


def _backward(net: Network, acts, pre, dout: np.ndarray) -> np.ndarray:
    # One independent backward pass per sample, vectorised over the batch axis.
    # Nothing is reduced across samples here.
    n = dout.shape[0]
    grads = np.empty((n, net.n_params))
    delta = dout * _act_grad(net.activations[-1], pre[-1], acts[-1])
    for r in reversed(range(net.n_layers)):
        sl = net.layer_slices[r]
        fan_in, fan_out = net.sizes[r], net.sizes[r + 1]
        gw = delta[:, :, None] * acts[r][:, None, :]
        grads[:, sl.start:sl.start + fan_out * fan_in] = gw.reshape(n, -1)
        grads[:, sl.stop - fan_out:sl.stop] = delta
        if r > 0:
            delta = (delta @ net.weight(r)) * _act_grad(net.activations[r - 1], pre[r - 1], acts[r])
    return grads


def per_sample_grads(net: Network, batch: Batch, loss: str = "mse") -> PerSampleGrads:
    _check(net, batch)
    acts, pre = _forward_cache(net, batch.inputs)
    losses, dldf = per_sample_loss(acts[-1], batch.targets, loss)
    return PerSampleGrads(_backward(net, acts, pre, dldf), losses, net.layer_slices)


def loss_gradient(net: Network, batch: Batch, loss: str = "mse") -> np.ndarray:
    """Gradient of the mean loss, reduced in ascending sample order."""
    g = per_sample_grads(net, batch, loss)
    return ordered_sum(g.flat) / g.n


def jacobian(net: Network, batch: Batch) -> np.ndarray:
    """Rows ``i * out + k`` hold the gradient of output ``k`` at sample ``i``."""
    _check(net, batch)
    n, out = len(batch), net.output_dim
    if n * out * net.n_params > JACOBIAN_CAP:
        raise NetworkError(
            f"Jacobian of {n * out} x {net.n_params} exceeds the {JACOBIAN_CAP} entry cap"
        )
    acts, pre = _forward_cache(net, batch.inputs)
    jac = np.empty((n, out, net.n_params))
    for k in range(out):
        dout = np.zeros((n, out))
        dout[:, k] = 1.0
        jac[:, k, :] = _backward(net, acts, pre, dout)
    return jac.reshape(n * out, net.n_params)
