"""Small MLP family with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector. Layer ``i`` occupies a
row-major ``(fan_in, fan_out)`` weight block followed by its bias.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .losses import LossFn

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("sigmoid", "identity")

PARAM_MAGIC = b"MDLP"
PARAM_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class ModelSpec:
    n_in: int
    n_out: int
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"
    output: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.n_in, *self.hidden, self.n_out)
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.activation!r}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.n_in, *self.hidden, self.n_out)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


def _unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    layers = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-a, a, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks).astype(np.float64)


def _hidden(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(spec, params, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.n_in:
        raise ShapeError(f"inputs must be (n, {spec.n_in}), got {x.shape}")
    layers = _unpack(spec, np.asarray(params, dtype=np.float64))
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if i < len(layers) - 1:
            h = _hidden(spec, z)
        elif spec.output == "sigmoid":
            h = _sigmoid(z)
        else:
            h = z
        acts.append(h)
    return layers, acts


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return _forward_cache(spec, params, inputs)[1][-1]


def loss_value(spec: ModelSpec, params: np.ndarray, inputs, labels, loss: LossFn) -> float:
    return loss.value(forward(spec, params, inputs), np.asarray(labels, dtype=np.float64))


def loss_and_grad(spec: ModelSpec, params: np.ndarray, inputs, labels,
                  loss: LossFn) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient with respect to ``params``."""
    labels = np.asarray(labels, dtype=np.float64)
    layers, acts = _forward_cache(spec, params, inputs)
    out = acts[-1]
    if labels.shape != out.shape:
        raise ShapeError(f"labels shape {labels.shape} != output shape {out.shape}")
    if out.shape[0] == 0:
        raise ShapeError("empty batch")
    value, d_out = loss.value_and_grad(out, labels)

    if spec.output == "sigmoid":
        delta = d_out * out * (1.0 - out)
    else:
        delta = d_out

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_prev = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append((h_prev.T @ delta).ravel())
        if i > 0:
            back = delta @ w.T
            if spec.activation == "relu":
                delta = back * (h_prev > 0)
            else:
                delta = back * (1.0 - h_prev * h_prev)
    grads.reverse()
    return value, np.concatenate(grads)


def sgd_step(params: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"params {params.shape} and grad {grad.shape} differ")
    return params - eta * grad


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.size):
        orig = x[j]
        x[j] = orig + epsilon
        f_plus = f(x)
        x[j] = orig - epsilon
        f_minus = f(x)
        x[j] = orig
        grad[j] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad


def finite_diff_grad(spec: ModelSpec, params: np.ndarray, inputs, labels,
                     loss: LossFn, epsilon: float = 1e-5) -> np.ndarray:
    return central_difference(
        lambda p: loss_value(spec, p, inputs, labels, loss), params, epsilon)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over coordinates."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def save_params(path: str | Path, params: Sequence[float], magic: bytes = PARAM_MAGIC) -> None:
    """Write a 16-byte header (magic, version, length) then little-endian float64 values."""
    values = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, PARAM_VERSION, values.size))
        fh.write(values.tobytes())


def load_params(path: str | Path, magic: bytes = PARAM_MAGIC) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    got_magic, version, length = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise ValueError(f"{path}: bad magic {got_magic!r}")
    if version != PARAM_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * length:
        raise ValueError(f"{path}: expected {length} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
