"""Dense feedforward network with softmax output and (weighted) cross-entropy.

Everything here is a pure function of its inputs: parameters are never
mutated in place, so values can be shared freely across threads. All math
is float64; probabilities are clamped to [LOG_CLAMP, 1] inside the losses
so a confident wrong prediction never produces NaN.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Clamp applied to predicted probabilities inside the losses. Oracle tests
# must clamp identically or finite differences will disagree near p -> 0.
LOG_CLAMP = 1e-12

_ACTIVATIONS = ("relu", "softmax")


class ShapeError(ValueError):
    """Dimension mismatch between parameters and data."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str  # "relu" or "softmax"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self.input_dim}x{self.output_dim}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def validate_layers(layers: Sequence[LayerSpec]) -> None:
    """Consecutive layers must chain; softmax only on the final layer."""
    if not layers:
        raise ShapeError("empty layer list")
    for a, b in zip(layers, layers[1:]):
        if a.output_dim != b.input_dim:
            raise ShapeError(f"layer output {a.output_dim} != next input {b.input_dim}")
    for spec in layers[:-1]:
        if spec.activation == "softmax":
            raise ShapeError("softmax only permitted on the final layer")
    if layers[-1].activation != "softmax":
        raise ShapeError("final layer must be softmax")


@dataclass
class ModelParameters:
    """Ordered weights/biases of every layer; the unit of client/server exchange.

    weights[l] has shape (out, in), biases[l] shape (out,). Instances form a
    vector space (see add/scale) so federated averaging is well defined.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights/biases length mismatch")
        if not self.activations:
            self.activations = ["relu"] * (len(self.weights) - 1) + ["softmax"]
        for arr in self.weights + self.biases:
            arr.setflags(write=False)

    @property
    def layer_specs(self) -> list[LayerSpec]:
        return [
            LayerSpec(W.shape[1], W.shape[0], act)
            for W, act in zip(self.weights, self.activations)
        ]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def same_shape(self, other: "ModelParameters") -> bool:
        return (
            len(self.weights) == len(other.weights)
            and all(a.shape == b.shape for a, b in zip(self.weights, other.weights))
            and all(a.shape == b.shape for a, b in zip(self.biases, other.biases))
        )


def init_params(layers: Sequence[LayerSpec], rng: np.random.Generator) -> ModelParameters:
    """Scaled-uniform weight init (limit sqrt(6/(fan_in+fan_out))), zero biases.

    Fully determined by the generator state, so runs are reproducible per seed.
    """
    validate_layers(layers)
    weights, biases = [], []
    for spec in layers:
        limit = np.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        weights.append(rng.uniform(-limit, limit, size=(spec.output_dim, spec.input_dim)))
        biases.append(np.zeros(spec.output_dim))
    return ModelParameters(weights, biases, [s.activation for s in layers])


def zeros_like(params: ModelParameters) -> ModelParameters:
    return ModelParameters(
        [np.zeros_like(W) for W in params.weights],
        [np.zeros_like(b) for b in params.biases],
        list(params.activations),
    )


def add(a: ModelParameters, b: ModelParameters) -> ModelParameters:
    if not a.same_shape(b):
        raise ShapeError("cannot add parameters of different shapes")
    return ModelParameters(
        [Wa + Wb for Wa, Wb in zip(a.weights, b.weights)],
        [ba + bb for ba, bb in zip(a.biases, b.biases)],
        list(a.activations),
    )


def scale(a: ModelParameters, s: float) -> ModelParameters:
    return ModelParameters(
        [s * W for W in a.weights],
        [s * b for b in a.biases],
        list(a.activations),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; stable up to |logit| ~ 1e3+."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(params: ModelParameters, batch: np.ndarray):
    """Forward pass keeping post-activation values of every layer for backprop."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got ndim={batch.ndim}")
    if batch.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} features, model expects {params.input_dim}"
        )
    acts = [batch]
    a = batch
    for W, b, kind in zip(params.weights, params.biases, params.activations):
        z = a @ W.T + b
        a = softmax(z) if kind == "softmax" else np.maximum(z, 0.0)
        acts.append(a)
    return acts


def forward(params: ModelParameters, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, one distribution per row (rows sum to 1)."""
    return _forward_cached(params, batch)[-1]


def _check_pred_truth(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise ShapeError(f"pred shape {pred.shape} != truth shape {truth.shape}")
    if pred.ndim != 2 or pred.shape[0] == 0:
        raise ShapeError("pred/truth must be non-empty 2-D arrays")


def _per_sample_nll(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    # one-hot truth: the row dot-product picks out log p at the true class
    p = np.clip(pred, LOG_CLAMP, 1.0)
    return -(truth * np.log(p)).sum(axis=1)


def cross_entropy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over samples of -log p at the true class."""
    _check_pred_truth(pred, truth)
    return float(_per_sample_nll(pred, truth).mean())


def weighted_cross_entropy(pred: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Cross-entropy with each sample scaled by its true class's weight.

    With all weights equal to 1 this is bit-identical to cross_entropy
    (multiplication by exactly 1.0 is exact in IEEE-754).
    """
    _check_pred_truth(pred, truth)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (pred.shape[1],):
        raise ShapeError(f"weights length {weights.shape} != class count {pred.shape[1]}")
    per_sample = truth @ weights  # weight of each sample's true class
    return float((per_sample * _per_sample_nll(pred, truth)).mean())


def backward(
    params: ModelParameters,
    batch: np.ndarray,
    truth: np.ndarray,
    weights: np.ndarray | None = None,
) -> ModelParameters:
    """Analytic gradient of (weighted_)cross_entropy(forward(params, batch), truth).

    Returns a ModelParameters with the same shape structure holding the
    gradient of every weight and bias.
    """
    acts = _forward_cached(params, batch)
    pred = acts[-1]
    _check_pred_truth(pred, truth)
    n = batch.shape[0]
    if weights is None:
        sample_w = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (pred.shape[1],):
            raise ShapeError(f"weights length {weights.shape} != class count {pred.shape[1]}")
        sample_w = truth @ weights

    grad_w: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * len(params.biases)  # type: ignore[list-item]

    # softmax + cross-entropy: dL/dz = w * (p - t) / n
    delta = (pred - truth) * (sample_w / n)[:, None]
    for l in range(len(params.weights) - 1, -1, -1):
        a_prev = acts[l]
        grad_w[l] = delta.T @ a_prev
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (acts[l] > 0.0)
    return ModelParameters(grad_w, grad_b, list(params.activations))


def sgd_step(params: ModelParameters, gradient: ModelParameters, learning_rate: float) -> ModelParameters:
    """params - learning_rate * gradient, element-wise."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if not params.same_shape(gradient):
        raise ShapeError("gradient shape does not match parameters")
    return ModelParameters(
        [W - learning_rate * g for W, g in zip(params.weights, gradient.weights)],
        [b - learning_rate * g for b, g in zip(params.biases, gradient.biases)],
        list(params.activations),
    )


# --- serialization -----------------------------------------------------------
# Versioned binary layout (little-endian):
#   magic "FNP1" | u32 n_layers | per layer: u32 in, u32 out, u8 activation
#   | per layer: row-major float64 W bytes then float64 b bytes
# Round-trip is bit-exact.

_MAGIC = b"FNP1"
_ACT_CODE = {"relu": 0, "softmax": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def to_bytes(params: ModelParameters) -> bytes:
    out = bytearray(_MAGIC)
    out += struct.pack("<I", len(params.weights))
    for W, act in zip(params.weights, params.activations):
        out += struct.pack("<IIB", W.shape[1], W.shape[0], _ACT_CODE[act])
    for W, b in zip(params.weights, params.biases):
        out += np.ascontiguousarray(W, dtype="<f8").tobytes()
        out += np.ascontiguousarray(b, dtype="<f8").tobytes()
    return bytes(out)


def from_bytes(blob: bytes) -> ModelParameters:
    if blob[:4] != _MAGIC:
        raise ValueError("bad parameter blob magic")
    (n_layers,) = struct.unpack_from("<I", blob, 4)
    off = 8
    shapes = []
    for _ in range(n_layers):
        d_in, d_out, act = struct.unpack_from("<IIB", blob, off)
        shapes.append((d_in, d_out, _ACT_NAME[act]))
        off += 9
    weights, biases, acts = [], [], []
    for d_in, d_out, act in shapes:
        W = np.frombuffer(blob, dtype="<f8", count=d_in * d_out, offset=off).reshape(d_out, d_in)
        off += 8 * d_in * d_out
        b = np.frombuffer(blob, dtype="<f8", count=d_out, offset=off)
        off += 8 * d_out
        weights.append(W.copy())
        biases.append(b.copy())
        acts.append(act)
    return ModelParameters(weights, biases, acts)


def save_params(params: ModelParameters, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(params))


def load_params(path) -> ModelParameters:
    with open(path, "rb") as f:
        return from_bytes(f.read())


def params_hash(params: ModelParameters) -> str:
    return hashlib.sha256(to_bytes(params)).hexdigest()
