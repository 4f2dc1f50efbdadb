"""Minimal fully-connected classifier with hand-written reverse-mode gradients.

Arrays are plain numpy arrays. Parameters are stored in float32 by default; the
engine computes in whatever dtype the parameters carry, so a float64 copy of a
model (``model.astype(np.float64)``) runs the exact same code path.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPE = np.float32

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_MAGIC = b"RATCKPT1"


class EngineError(ValueError):
    """Shape or value problem detected by the engine."""


class CheckpointError(ValueError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise EngineError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise EngineError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpModel:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise EngineError("model needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].out_width != self.layers[i].in_width:
                raise EngineError(
                    f"layer {i} expects width {self.layers[i].in_width}, "
                    f"layer {i - 1} produces {self.layers[i - 1].out_width}"
                )
        if self.layers[-1].activation != "identity":
            raise EngineError("final layer must use identity activation (raw logits)")
        if self.num_classes < 2:
            raise EngineError("classifier needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_width

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [layer.out_width for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``; the arrays are live references."""
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(
            [
                DenseLayer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation)
                for l in self.layers
            ]
        )


@dataclass
class GradientBundle:
    param_grads: list[np.ndarray]  # mirrors MlpModel.parameters()
    input_grads: np.ndarray
    loss: float


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise EngineError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise EngineError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise EngineError("weight decay must be nonnegative")

    @classmethod
    def for_model(cls, model: MlpModel, learning_rate, momentum=0.9, weight_decay=0.0):
        velocity = [np.zeros_like(p) for p in model.parameters()]
        return cls(learning_rate, momentum, weight_decay, velocity)


def init_mlp(widths, rng: np.random.Generator, dtype=DTYPE) -> MlpModel:
    """He-normal weights, zero biases; ReLU on every layer except the last."""
    if len(widths) < 2:
        raise EngineError("need at least input and output widths")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        act = "identity" if i == len(widths) - 2 else "relu"
        layers.append(DenseLayer(w, b, act))
    return MlpModel(layers)


def _check_input(model: MlpModel, batch: np.ndarray):
    if batch.ndim != 2:
        raise EngineError(f"batch must be 2-D [n, d], got shape {batch.shape}")
    if batch.shape[1] != model.input_width:
        raise EngineError(
            f"layer 0 expects input width {model.input_width}, got {batch.shape[1]}"
        )


def forward(model: MlpModel, batch: np.ndarray, return_cache: bool = False):
    """Logits ``[n, c]``. With ``return_cache`` also the per-layer inputs and pre-activations."""
    _check_input(model, batch)
    dtype = model.layers[0].weights.dtype
    h = np.asarray(batch, dtype=dtype)
    cache = []
    for layer in model.layers:
        z = h @ layer.weights.T + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0) if layer.activation == "relu" else z
    if return_cache:
        return h, cache
    return h


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class.
    return np.argmax(logits, axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels, num_classes: int, dtype=DTYPE) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def _check_targets(logits: np.ndarray, targets: np.ndarray):
    if targets.shape != logits.shape:
        raise EngineError(f"targets shape {targets.shape} != logits shape {logits.shape}")
    if np.any(targets < 0) or np.any(np.abs(targets.sum(axis=1, dtype=np.float64) - 1) > 1e-6):
        raise EngineError("every target row must be a probability distribution")


def per_sample_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``-sum_k t_k log softmax(z)_k`` per row, accumulated in float64."""
    logp = log_softmax(logits).astype(np.float64)
    return -(targets.astype(np.float64) * logp).sum(axis=1)


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    _check_targets(logits, targets)
    return float(per_sample_cross_entropy(logits, targets).mean())


def cross_entropy_logit_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample gradient of soft cross-entropy w.r.t. logits (no 1/n factor)."""
    # targets rows sum to one, so d/dz = softmax(z) * sum(t) - t = softmax(z) - t
    return (softmax(logits) - targets).astype(logits.dtype)


def backprop(model: MlpModel, cache, dlogits: np.ndarray, need_params: bool = True):
    """Push ``dlogits`` back through the cached forward pass.

    Returns ``(param_grads, input_grads)``; ``param_grads`` is None when
    ``need_params`` is False (attacks only need the input gradient).
    """
    grads = [None] * (2 * len(model.layers))
    delta = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        h, z = cache[i]
        if layer.activation == "relu":
            delta = delta * (z > 0)
        if need_params:
            grads[2 * i] = delta.T @ h
            grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ layer.weights
    return (grads if need_params else None), delta


def backward(model: MlpModel, batch: np.ndarray, targets: np.ndarray) -> GradientBundle:
    """Exact gradients of the mean soft cross-entropy over the batch."""
    logits, cache = forward(model, batch, return_cache=True)
    _check_targets(logits, targets)
    loss = float(per_sample_cross_entropy(logits, targets).mean())
    n = batch.shape[0]
    dlogits = cross_entropy_logit_grad(logits, targets) / logits.dtype.type(n)
    param_grads, input_grads = backprop(model, cache, dlogits)
    return GradientBundle(param_grads, input_grads, loss)


def sgd_step(model: MlpModel, grads, state: SgdState) -> MlpModel:
    """Momentum SGD with coupled weight decay, applied in place.

    ``v <- momentum * v + (g + weight_decay * p)``, ``p <- p - lr * v``.
    ``grads`` is a GradientBundle or a list mirroring ``model.parameters()``.
    """
    if isinstance(grads, GradientBundle):
        grads = grads.param_grads
    params = model.parameters()
    if len(grads) != len(params):
        raise EngineError(f"expected {len(params)} gradient tensors, got {len(grads)}")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    for k, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if g.shape != p.shape or v.shape != p.shape:
            raise EngineError(f"parameter {k}: gradient {g.shape} / velocity {v.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise FloatingPointError(
                f"non-finite gradient in parameter {k} (layer {k // 2}, "
                f"{'weights' if k % 2 == 0 else 'bias'}): {bad} bad entries"
            )
        dt = p.dtype.type
        v *= dt(state.momentum)
        v += g + dt(state.weight_decay) * p
        p -= dt(state.learning_rate) * v
    return model


_ACT_CODES = {"relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def save_checkpoint(model: MlpModel, path) -> None:
    """Binary layout: magic, u32 layer count, per-layer (in, out, act) u32 triples,
    then each layer's weights followed by its bias as little-endian float32."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        buf += struct.pack("<III", layer.in_width, layer.out_width, _ACT_CODES[layer.activation])
    for layer in model.layers:
        buf += layer.weights.astype("<f4").tobytes(order="C")
        buf += layer.bias.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> MlpModel:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic = data[:8]
    if magic != CHECKPOINT_MAGIC:
        if magic[:7] == CHECKPOINT_MAGIC[:7]:
            raise CheckpointError(f"{path}: unsupported checkpoint version {magic!r}")
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    (count,) = struct.unpack_from("<I", data, 8)
    offset = 12
    header = []
    for _ in range(count):
        if offset + 12 > len(data):
            raise CheckpointError(f"{path}: truncated layer header")
        header.append(struct.unpack_from("<III", data, offset))
        offset += 12
    layers = []
    for fan_in, fan_out, code in header:
        if code not in _ACT_NAMES:
            raise CheckpointError(f"{path}: unknown activation code {code}")
        nbytes = 4 * (fan_in * fan_out + fan_out)
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated parameter data")
        w = np.frombuffer(data, "<f4", fan_in * fan_out, offset).reshape(fan_out, fan_in)
        offset += 4 * fan_in * fan_out
        b = np.frombuffer(data, "<f4", fan_out, offset)
        offset += 4 * fan_out
        layers.append(DenseLayer(w.astype(DTYPE), b.astype(DTYPE), _ACT_NAMES[code]))
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return MlpModel(layers)
