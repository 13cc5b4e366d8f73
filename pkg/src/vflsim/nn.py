"""Minimal deterministic feed-forward networks with hand-derived backprop and SGD.

Dense layers only, float64 throughout. Activations are stored post-nonlinearity
because downstream information profiling consumes layer outputs. Softmax is
fused into the loss for numerical stability; a layer declared with activation
"softmax" behaves as identity during the forward pass and marks the final
classification layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError

ACTIVATIONS = ("relu", "identity", "softmax")

# Per-layer post-activation outputs; index 0 is the input batch.
ActivationTrace = list


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        for lay in layers[:-1]:
            if lay.activation == "softmax":
                raise ConfigError("softmax is only allowed on the final layer")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def param_count(self) -> int:
        return sum(l.in_dim * l.out_dim + l.out_dim for l in self.layers)


def mlp_spec(dims: Sequence[int], final_activation: str = "softmax") -> ModelSpec:
    """Build a ModelSpec from a dimension chain, ReLU hidden layers."""
    if len(dims) < 2:
        raise ConfigError("need at least input and output dims")
    layers = [LayerSpec(a, b, "relu") for a, b in zip(dims[:-1], dims[1:])]
    layers[-1] = LayerSpec(dims[-2], dims[-1], final_activation)
    return ModelSpec(tuple(layers))


@dataclass
class Model:
    spec: ModelSpec
    weights: list
    biases: list

    def copy(self) -> "Model":
        return Model(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def param_count(self) -> int:
        return self.spec.param_count()


@dataclass
class Gradients:
    weight_grads: list
    bias_grads: list
    input_grad: np.ndarray


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Seeded Gaussian init, std 1/sqrt(fan_in), zero biases.

    Identical (spec, seed) yields bit-identical models.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for lay in spec.layers:
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(lay.in_dim), (lay.in_dim, lay.out_dim)))
        biases.append(np.zeros(lay.out_dim))
    return Model(spec, weights, biases)


def _check_batch(batch: np.ndarray, in_dim: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got ndim={batch.ndim}")
    if batch.shape[1] != in_dim:
        raise ShapeError(f"batch has {batch.shape[1]} cols, model expects {in_dim}")
    return batch


def forward(model: Model, batch: np.ndarray) -> ActivationTrace:
    """Run the batch through every layer, returning all post-activation outputs.

    trace[0] is the input batch; trace[-1] are the logits (softmax deferred
    to the loss).
    """
    batch = _check_batch(batch, model.spec.in_dim)
    trace = [batch]
    h = batch
    # overflow to inf is tolerated here; the training loop detects divergence
    # through the loss rather than aborting mid-forward
    with np.errstate(over="ignore", invalid="ignore"):
        for lay, w, b in zip(model.spec.layers, model.weights, model.biases):
            z = h @ w + b
            h = np.maximum(z, 0.0) if lay.activation == "relu" else z
            trace.append(h)
    return trace


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, targets) -> tuple:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    `targets` is either a class-index vector or a matrix of target
    distribution rows (used by the label defenses). For index targets
    loss = mean(-log softmax[label]) and grad = (softmax - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError("logits must be 2-D")
    n, c = logits.shape
    targets = np.asarray(targets)
    with np.errstate(invalid="ignore", over="ignore"):
        logp = _log_softmax(logits)
        p = np.exp(logp)
        if targets.ndim == 1:
            if targets.shape[0] != n:
                raise ShapeError(f"{targets.shape[0]} labels for {n} logit rows")
            labels = targets.astype(np.int64)
            if labels.size and (labels.min() < 0 or labels.max() >= c):
                raise DataError(f"label out of range [0, {c})")
            loss = -float(np.mean(logp[np.arange(n), labels]))
            grad = p.copy()
            grad[np.arange(n), labels] -= 1.0
            grad /= n
        elif targets.ndim == 2:
            if targets.shape != logits.shape:
                raise ShapeError(f"target rows {targets.shape} != logits {logits.shape}")
            t = targets.astype(np.float64)
            loss = -float(np.mean(np.sum(t * logp, axis=1)))
            grad = (p * t.sum(axis=1, keepdims=True) - t) / n
        else:
            raise ShapeError("targets must be a label vector or distribution rows")
    return loss, grad


def backward(model: Model, trace: ActivationTrace, out_grad: np.ndarray) -> Gradients:
    """Backpropagate out_grad (w.r.t. the final layer output) through the model.

    Returns per-layer weight/bias gradients plus the gradient w.r.t. the
    input batch, which the VFL engine routes back to the passive parties.
    """
    n_layers = model.spec.n_layers
    if len(trace) != n_layers + 1:
        raise ShapeError(f"trace length {len(trace)} != layers+1 ({n_layers + 1})")
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != trace[-1].shape:
        raise ShapeError(f"out_grad shape {out_grad.shape} != output {trace[-1].shape}")
    weight_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    g = out_grad
    for j in range(n_layers - 1, -1, -1):
        if model.spec.layers[j].activation == "relu":
            g = g * (trace[j + 1] > 0)
        weight_grads[j] = trace[j].T @ g
        bias_grads[j] = g.sum(axis=0)
        g = g @ model.weights[j].T
    return Gradients(weight_grads, bias_grads, g)


def sgd_step(model: Model, grads: Gradients, lr: float) -> Model:
    """One plain SGD update; purely functional, returns a new Model."""
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    weights, biases = [], []
    for w, b, wg, bg in zip(model.weights, model.biases, grads.weight_grads, grads.bias_grads):
        if w.shape != wg.shape or b.shape != bg.shape:
            raise ShapeError("gradient shapes do not match model")
        weights.append(w - lr * wg)
        biases.append(b - lr * bg)
    return Model(model.spec, weights, biases)
