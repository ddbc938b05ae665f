"""Small MLP classifier with hand-written backprop and per-layer freezing.

Labels arrive as ``{-1, +1}`` and map to logit columns ``0`` and ``1``; the
loss is two-class softmax cross-entropy, optionally plus a differentiable
fairness penalty (see :class:`LossConfig`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, FileError, ShapeError, TrainingError

ACTIVATIONS = ("relu", "identity")
FAIRNESS_KINDS = ("none", "EO", "DP")
CHECKPOINT_FORMAT = "fairwin-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray
    activation: str = "relu"
    frozen: bool = False
    use_bias: bool = True

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def n_params(self) -> int:
        return self.weight.size + (self.bias.size if self.use_bias else 0)

    def copy(self) -> "DenseLayer":
        return replace(self, weight=self.weight.copy(), bias=self.bias.copy())


@dataclass
class NeuralNet:
    """Ordered dense layers; the trailing ``head_size`` layers form the head.

    The representation is the input to the head. A dense model has a
    one-layer head; after low-rank replacement the head is two layers.
    """

    layers: list
    head_size: int = 1

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        if self.layers[-1].activation != "identity":
            raise ShapeError("the last layer must have identity activation")
        if not 1 <= self.head_size <= len(self.layers):
            raise ShapeError(f"head_size {self.head_size} invalid for {len(self.layers)} layers")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def representation_dim(self) -> int:
        return self.layers[-self.head_size].in_dim

    @property
    def extractor(self) -> list:
        return self.layers[: len(self.layers) - self.head_size]

    @property
    def head(self) -> list:
        return self.layers[len(self.layers) - self.head_size:]

    def trainable_params(self) -> int:
        return sum(layer.n_params for layer in self.layers if not layer.frozen)

    def copy(self) -> "NeuralNet":
        return NeuralNet([layer.copy() for layer in self.layers], self.head_size)

    def freeze_extractor(self) -> "NeuralNet":
        """Copy with every non-head layer frozen and the head trainable."""
        n_ext = len(self.layers) - self.head_size
        layers = [replace(layer.copy(), frozen=i < n_ext) for i, layer in enumerate(self.layers)]
        return NeuralNet(layers, self.head_size)

    def with_head(self, head_layers) -> "NeuralNet":
        return NeuralNet([layer.copy() for layer in self.extractor] + list(head_layers), len(head_layers))


@dataclass
class GradientSet:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, net: NeuralNet) -> "GradientSet":
        return cls([np.zeros_like(l.weight) for l in net.layers], [np.zeros_like(l.bias) for l in net.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


@dataclass(frozen=True)
class LossConfig:
    """Objective: ``scale * (CE + intensity * R)``.

    ``R`` is the DP surrogate ``|mean p+(s=1) - mean p+(s=2)|`` over soft
    positive probabilities, or for EO the same gap taken separately on the
    ``y=+1`` and ``y=-1`` rows and summed. Groups or cells missing from a
    batch contribute nothing.
    """

    fairness: str = "none"
    intensity: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.fairness not in FAIRNESS_KINDS:
            raise ConfigError(f"fairness must be one of {FAIRNESS_KINDS}, got {self.fairness!r}")
        if self.intensity < 0:
            raise ConfigError("regularizer intensity must be >= 0")


def glorot_layer(rng, in_dim, out_dim, activation="relu") -> DenseLayer:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


def init_net(dims, seed=0) -> NeuralNet:
    """ReLU MLP with layer widths ``dims`` (input first, classes last)."""
    if len(dims) < 2:
        raise ConfigError("dims needs at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = [
        glorot_layer(rng, a, b, "identity" if i == len(dims) - 2 else "relu")
        for i, (a, b) in enumerate(zip(dims, dims[1:]))
    ]
    return NeuralNet(layers)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _forward_all(net, x):
    """Returns the list of layer inputs plus the final logits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input has shape {x.shape}, network expects (*, {net.in_dim})")
    inputs = []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight
        if layer.use_bias:
            z = z + layer.bias
        h = _act(z, layer.activation)
    return inputs, h


def forward(net: NeuralNet, x):
    """Return ``(logits, representation)`` for a batch of rows ``x``."""
    inputs, logits = _forward_all(net, x)
    return logits, inputs[len(net.layers) - net.head_size]


def representation(net: NeuralNet, x) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64)
    for layer in net.extractor:
        h = _act(h @ layer.weight + (layer.bias if layer.use_bias else 0.0), layer.activation)
    return h


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def label_index(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise DataError("labels must be -1 or +1")
    return ((y + 1) // 2).astype(np.intp)


def _unpack(batch):
    if isinstance(batch, Dataset):
        return batch.x, batch.y, batch.s
    x, y, *rest = batch
    return x, np.asarray(y), (np.asarray(rest[0]) if rest else None)


def _fairness_penalty(p_pos, y, s, kind):
    """Penalty value and its gradient w.r.t. ``p_pos``."""
    grad = np.zeros_like(p_pos)
    if kind == "DP":
        cells = [np.ones_like(y, dtype=bool)]
    else:
        cells = [y == 1, y == -1]
    total = 0.0
    for cell in cells:
        g1 = cell & (s == 1)
        g2 = cell & (s == 2)
        n1, n2 = int(g1.sum()), int(g2.sum())
        if n1 == 0 or n2 == 0:
            continue
        gap = p_pos[g1].mean() - p_pos[g2].mean()
        total += abs(gap)
        sign = np.sign(gap)
        grad[g1] += sign / n1
        grad[g2] -= sign / n2
    return total, grad


def loss_and_grad(net: NeuralNet, batch, cfg: LossConfig = LossConfig()):
    """Mean loss over ``batch`` and its gradient for every unfrozen layer.

    ``batch`` is a :class:`Dataset` or an ``(x, y[, s])`` tuple; ``s`` is
    required when ``cfg`` carries a fairness penalty.
    """
    x, y, s = _unpack(batch)
    n = len(y)
    if n == 0:
        raise DataError("empty batch")
    inputs, logits = _forward_all(net, x)
    if logits.shape[1] != 2:
        raise ShapeError("binary cross-entropy needs exactly two logits")
    t = label_index(y)
    p = softmax(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), t].mean())
    delta = p.copy()
    delta[np.arange(n), t] -= 1.0
    delta /= n

    if cfg.fairness != "none" and cfg.intensity > 0:
        if s is None:
            raise DataError("fairness penalty needs the sensitive attribute")
        pen, dpen = _fairness_penalty(p[:, 1], y, s, cfg.fairness)
        loss += cfg.intensity * pen
        dp = cfg.intensity * dpen * p[:, 1] * p[:, 0]
        delta[:, 1] += dp
        delta[:, 0] -= dp

    loss *= cfg.scale
    delta *= cfg.scale

    grads = GradientSet.zeros_like(net)
    trainable = [i for i, layer in enumerate(net.layers) if not layer.frozen]
    if trainable:
        first = trainable[0]
        for i in range(len(net.layers) - 1, first - 1, -1):
            layer = net.layers[i]
            if not layer.frozen:
                grads.weights[i] = inputs[i].T @ delta
                if layer.use_bias:
                    grads.biases[i] = delta.sum(axis=0)
            if i > first:
                delta = delta @ layer.weight.T
                if net.layers[i - 1].activation == "relu":
                    delta = delta * (inputs[i] > 0)
    if not math.isfinite(loss):
        raise TrainingError("loss is not finite")
    return loss, grads


def sgd_step(net: NeuralNet, grads: GradientSet, lr: float) -> NeuralNet:
    """New network with ``param - lr * grad`` on unfrozen layers.

    Frozen layers are shared with the input network, not copied.
    """
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")
    layers = []
    for layer, gw, gb in zip(net.layers, grads.weights, grads.biases):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError("gradient set does not match network")
        if layer.frozen:
            layers.append(layer)
            continue
        bias = layer.bias - lr * gb if layer.use_bias else layer.bias
        layers.append(replace(layer, weight=layer.weight - lr * gw, bias=bias))
    return NeuralNet(layers, net.head_size)


def per_sample_final_grads(net: NeuralNet, x, y, scale: float = 1.0):
    """Per-sample cross-entropy gradients of the last layer.

    Returns ``(weight_grads, bias_grads)`` with shapes ``(N, d, k)`` and
    ``(N, k)``.
    """
    inputs, logits = _forward_all(net, x)
    t = label_index(y)
    err = softmax(logits)
    err[np.arange(len(t)), t] -= 1.0
    err *= scale
    h = inputs[-1]
    return h[:, :, None] * err[:, None, :], err


def per_sample_grad_final_layer(net: NeuralNet, x, y):
    """Single-sample gradient of the last layer's weight and bias."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    gw, gb = per_sample_final_grads(net, x, np.atleast_1d(y))
    return gw[0], gb[0]


def train(net: NeuralNet, data, cfg: LossConfig = LossConfig(), lr=0.01, epochs=30, batch_size=64, seed=0):
    """Minibatch SGD with a seeded per-epoch shuffle.

    Returns the trained network and the full-data loss recorded before the
    first epoch and after each epoch.
    """
    x, y, s = _unpack(data)
    n = len(y)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    full = (x, y, s)
    history = [loss_and_grad(net, full, cfg)[0]]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = (x[idx], y[idx], None if s is None else s[idx])
            _, grads = loss_and_grad(net, batch, cfg)
            net = sgd_step(net, grads, lr)
        history.append(loss_and_grad(net, full, cfg)[0])
    return net, history


def to_dict(net: NeuralNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "head_size": net.head_size,
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "activation": layer.activation,
                "frozen": layer.frozen,
                "use_bias": layer.use_bias,
                "weight": layer.weight.tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }


def from_dict(payload: dict) -> NeuralNet:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise FileError("not a fairwin checkpoint")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FileError(f"unsupported checkpoint format_version {version}")
    layers = []
    for spec in payload["layers"]:
        w = np.array(spec["weight"], dtype=np.float64).reshape(spec["in_dim"], spec["out_dim"])
        layers.append(DenseLayer(w, np.array(spec["bias"], dtype=np.float64), spec["activation"],
                                 spec["frozen"], spec["use_bias"]))
    return NeuralNet(layers, payload["head_size"])


def save_checkpoint(net: NeuralNet, path, meta=None):
    payload = to_dict(net)
    if meta:
        payload["meta"] = meta
    try:
        Path(path).write_text(json.dumps(payload, indent=1) + "\n")
    except OSError as exc:
        raise FileError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> NeuralNet:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_dict(payload)
