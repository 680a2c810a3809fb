"""The shared local model: a single affine layer trained with SGD.

Parameters live in float64; embeddings may arrive float32 and are upcast
at entry. The loss is mean softmax cross-entropy. Weight decay enters the
weight gradient only (never the bias), while the reported loss scalar is
the data term alone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataValidationError, FormatError

_MAGIC = b"MLP1"
_VERSION = 1
_DTYPE_F64 = 2
_HEADER = struct.Struct("<4sIIIBBBB")


@dataclass(frozen=True)
class LinearClassifierParams:
    """Weights (C, p) and bias (C,) of the shared classifier."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DataValidationError(
                f"parameter shape mismatch: weights {w.shape}, bias {b.shape}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DataValidationError("parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "LinearClassifierParams":
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64

    def __post_init__(self):
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("SGD hyperparameters must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def forward(params: LinearClassifierParams, batch: np.ndarray) -> np.ndarray:
    """Logits X W^T + b for a (B, p) batch."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DataValidationError(
            f"batch width {x.shape} incompatible with parameter dim {params.dim}"
        )
    return x @ params.weights.T + params.bias


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.size and (int(y.min()) < 0 or int(y.max()) >= num_classes):
        raise DataValidationError(f"labels outside [0, {num_classes})")
    return y.astype(np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    params: LinearClassifierParams,
    batch: np.ndarray,
    labels: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, LinearClassifierParams]:
    """Mean cross-entropy and its gradients, packed like the parameters.

    Softmax is computed with max-subtraction. The weight gradient carries
    the decay term weight_decay * W; the bias gradient does not, and the
    returned loss scalar is the data term alone.

    Args:
        params: current classifier parameters.
        batch: (B, p) embeddings, B >= 1.
        labels: B integer labels in [0, C).
        weight_decay: L2 coefficient folded into the weight gradient.

    Returns:
        (mean cross-entropy, gradients in a LinearClassifierParams container).
    """
    x = np.asarray(batch, dtype=np.float64)
    y = _check_labels(labels, params.num_classes)
    if x.shape[0] == 0:
        raise DataValidationError("empty batch")
    if x.shape[0] != y.size:
        raise DataValidationError(f"batch size {x.shape[0]} != label count {y.size}")

    log_probs = _log_softmax(forward(params, x))
    rows = np.arange(x.shape[0])
    loss = float(-log_probs[rows, y].mean())

    delta = np.exp(log_probs)
    delta[rows, y] -= 1.0
    delta /= x.shape[0]
    grad_w = delta.T @ x + weight_decay * params.weights
    grad_b = delta.sum(axis=0)
    return loss, LinearClassifierParams(grad_w, grad_b)


def evaluate_loss(params: LinearClassifierParams, data: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy on a split, without gradients or decay."""
    y = _check_labels(labels, params.num_classes)
    if y.size == 0:
        raise DataValidationError("empty evaluation split")
    log_probs = _log_softmax(forward(params, data))
    return float(-log_probs[np.arange(y.size), y].mean())


def sgd_step(
    params: LinearClassifierParams,
    velocity: LinearClassifierParams,
    grads: LinearClassifierParams,
    config: SgdConfig,
) -> tuple[LinearClassifierParams, LinearClassifierParams]:
    """One momentum-SGD update: v <- m*v + g, theta <- theta - lr*v.

    Decay is already folded into the gradients, so none is applied here.
    Returns the updated (params, velocity); inputs are left untouched.
    """
    new_vw = config.momentum * velocity.weights + grads.weights
    new_vb = config.momentum * velocity.bias + grads.bias
    new_w = params.weights - config.learning_rate * new_vw
    new_b = params.bias - config.learning_rate * new_vb
    return LinearClassifierParams(new_w, new_b), LinearClassifierParams(new_vw, new_vb)


def evaluate_top1(
    params: LinearClassifierParams, data: np.ndarray, labels: np.ndarray
) -> float:
    """Top-1 accuracy in [0, 1]; argmax ties break to the lowest class index."""
    y = _check_labels(labels, params.num_classes)
    if y.size == 0:
        raise DataValidationError("empty evaluation split")
    predictions = np.argmax(forward(params, data), axis=1)
    return float((predictions == y).mean())


def save_params(path, params: LinearClassifierParams) -> None:
    """Checkpoint parameters as an MLP1 container (little-endian float64)."""
    c, p = params.weights.shape
    blob = bytearray(_HEADER.pack(_MAGIC, _VERSION, c, p, _DTYPE_F64, 0, 0, 0))
    blob += params.weights.astype("<f8", copy=False).tobytes()
    blob += params.bias.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(blob))


def load_params(path) -> LinearClassifierParams:
    """Read an MLP1 checkpoint back, bit-exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the fixed header", offset=len(raw))
    magic, version, c, p, dtype, *_pads = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype != _DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}", offset=16)
    expected = _HEADER.size + c * p * 8 + c * 8
    if len(raw) < expected:
        raise FormatError(
            f"truncated: expected {expected} bytes, file ends early", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError("unexpected trailing bytes", offset=expected)
    weights = np.frombuffer(raw, dtype="<f8", count=c * p, offset=_HEADER.size).reshape(c, p)
    bias = np.frombuffer(raw, dtype="<f8", count=c, offset=_HEADER.size + c * p * 8)
    return LinearClassifierParams(weights.copy(), bias.copy())
