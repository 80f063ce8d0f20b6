"""Small classifiers with exact per-sample cross-entropy gradients.

Parameters live in a single flat float64 vector. Layout, row-major:

* softmax regression: ``W (feature_dim x C)``, ``b (C)``
* mlp: ``W1 (feature_dim x hidden)``, ``b1 (hidden)``, ``W2 (hidden x C)``, ``b2 (C)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import InvalidInputError

KINDS = ("softmax_regression", "mlp")
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    feature_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise InvalidInputError("need feature_dim >= 1 and num_classes >= 2")
        if self.kind == "mlp":
            if self.hidden_dim < 1:
                raise InvalidInputError("mlp needs hidden_dim >= 1")
            if self.activation not in ACTIVATIONS:
                raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.kind == "softmax_regression":
            return [(self.feature_dim, self.num_classes)]
        return [(self.feature_dim, self.hidden_dim), (self.hidden_dim, self.num_classes)]

    @property
    def num_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes)


def unflatten(spec: ModelSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split ``theta`` into ``(weight, bias)`` views per layer."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.num_params,):
        raise InvalidInputError(f"expected {spec.num_params} parameters, got shape {theta.shape}")
    layers, pos = [], 0
    for fan_in, fan_out in spec.layer_shapes:
        w = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes:
        s = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return flatten(layers)


def _activate(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)


def _activation_grad(spec: ModelSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_batch(spec: ModelSpec, x, y=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.feature_dim:
        raise InvalidInputError(f"features must have {spec.feature_dim} columns, got shape {x.shape}")
    if y is None:
        return x, None
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (x.shape[0],):
        raise InvalidInputError("features and labels differ in length")
    if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
        raise InvalidInputError(f"labels must lie in [0, {spec.num_classes})")
    return x, y


def logits(spec: ModelSpec, theta, x) -> np.ndarray:
    x, _ = _check_batch(spec, x)
    layers = unflatten(spec, theta)
    if spec.kind == "softmax_regression":
        w, b = layers[0]
        return x @ w + b
    (w1, b1), (w2, b2) = layers
    return _activate(spec, x @ w1 + b1) @ w2 + b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def per_sample_losses(spec: ModelSpec, theta, x, y) -> np.ndarray:
    x, y = _check_batch(spec, x, y)
    return -_log_softmax(logits(spec, theta, x))[np.arange(y.size), y]


def pointwise_loss(spec: ModelSpec, theta, x, y: int) -> float:
    return float(per_sample_losses(spec, theta, np.asarray(x)[None, :], [y])[0])


def batch_loss(spec: ModelSpec, theta, x, y, weights=None, l2_reg: float = 0.0) -> float:
    """Weighted mean cross-entropy plus ``l2_reg/2 * ||theta||^2``."""
    losses = per_sample_losses(spec, theta, x, y)
    w = np.ones_like(losses) if weights is None else np.asarray(weights, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return float(np.mean(w * losses) + 0.5 * l2_reg * np.dot(theta, theta))


def weighted_batch_gradient(spec: ModelSpec, theta, x, y, weights=None, l2_reg: float = 0.0) -> np.ndarray:
    """Gradient of :func:`batch_loss` by backpropagation.

    Returns ``mean_k(weights_k * grad loss_k) + l2_reg * theta``.
    """
    x, y = _check_batch(spec, x, y)
    m = y.size
    if m == 0:
        raise InvalidInputError("empty batch")
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (m,):
        raise InvalidInputError("weights must match the batch length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite and nonnegative")
    theta = np.asarray(theta, dtype=np.float64)
    layers = unflatten(spec, theta)

    if spec.kind == "softmax_regression":
        (wt, b), = layers
        z = x @ wt + b
        hidden = x
    else:
        (w1, b1), (w2, b2) = layers
        pre = x @ w1 + b1
        hidden = _activate(spec, pre)
        z = hidden @ w2 + b2

    # d loss_k / d logits = softmax - onehot, scaled by w_k / m
    delta = np.exp(_log_softmax(z))
    delta[np.arange(m), y] -= 1.0
    delta *= (w / m)[:, None]

    if spec.kind == "softmax_regression":
        grads = [(hidden.T @ delta, delta.sum(axis=0))]
    else:
        back = (delta @ w2.T) * _activation_grad(spec, pre, hidden)
        grads = [(x.T @ back, back.sum(axis=0)), (hidden.T @ delta, delta.sum(axis=0))]
    return flatten(grads) + l2_reg * theta


def finite_difference_gradient(spec: ModelSpec, theta, x, y, weights=None, step: float = 1e-5, l2_reg: float = 0.0) -> np.ndarray:
    """Central differences of :func:`batch_loss`, one coordinate at a time."""
    if step <= 0:
        raise InvalidInputError("step must be positive")
    theta = np.array(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + step
        hi = batch_loss(spec, theta, x, y, weights, l2_reg)
        theta[k] = orig - step
        lo = batch_loss(spec, theta, x, y, weights, l2_reg)
        theta[k] = orig
        out[k] = (hi - lo) / (2.0 * step)
    return out


def near_kink(spec: ModelSpec, theta, x, margin: float) -> bool:
    """True if a ReLU pre-activation sits within ``margin`` of zero."""
    if spec.kind != "mlp" or spec.activation != "relu":
        return False
    x, _ = _check_batch(spec, x)
    (w1, b1), _ = unflatten(spec, theta)
    return bool(np.any(np.abs(x @ w1 + b1) < margin))


def predict(spec: ModelSpec, theta, x) -> np.ndarray:
    """Argmax class per row; ``np.argmax`` resolves ties to the lowest index."""
    return np.argmax(logits(spec, theta, x), axis=1)
