"""Multinomial logistic regression on flat parameter vectors.

Parameters are a 1-D float64 array of length ``K * d + K``: the ``K x d``
weight matrix in row-major order followed by the ``K`` biases. The class
count is recovered from the vector length and the data's feature dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Examples
from .errors import InvalidArgument

BYTES_PER_PARAM = 8


@dataclass(frozen=True)
class Hyperparams:
    eta: float
    steps: int
    batch_size: int | None = None  # None: full batch

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise InvalidArgument("eta must be > 0")
        if self.steps < 1:
            raise InvalidArgument("steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")


def param_count(num_classes: int, feature_dim: int) -> int:
    return num_classes * (feature_dim + 1)


def model_bytes(num_classes: int, feature_dim: int) -> int:
    return BYTES_PER_PARAM * param_count(num_classes, feature_dim)


def init_params(num_classes: int, feature_dim: int, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    return scale * rng.standard_normal(param_count(num_classes, feature_dim))


def zeros(num_classes: int, feature_dim: int) -> np.ndarray:
    return np.zeros(param_count(num_classes, feature_dim))


def num_classes_of(params: np.ndarray, feature_dim: int) -> int:
    params = np.asarray(params)
    if params.ndim != 1 or params.size % (feature_dim + 1):
        raise InvalidArgument(f"parameter vector of length {params.size} does not fit feature_dim={feature_dim}")
    return params.size // (feature_dim + 1)


def unpack(params: np.ndarray, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    k = num_classes_of(params, feature_dim)
    return params[: k * feature_dim].reshape(k, feature_dim), params[k * feature_dim:]


def pack(weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(weights, dtype=np.float64).ravel(), np.asarray(bias, dtype=np.float64)])


def _check(params: np.ndarray, data: Examples) -> int:
    if len(data) == 0:
        raise InvalidArgument("empty example set")
    k = num_classes_of(params, data.feature_dim)
    if data.labels.max() >= k:
        raise InvalidArgument(f"label {int(data.labels.max())} outside the model's {k} classes")
    return k


def logits(params: np.ndarray, features: np.ndarray) -> np.ndarray:
    w, b = unpack(params, features.shape[1])
    return features @ w.T + b


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_sum(params: np.ndarray, data: Examples) -> float:
    """Summed (not averaged) cross-entropy; building block for example-weighted means."""
    _check(params, data)
    logp = _log_softmax(logits(params, data.features))
    return float(-logp[np.arange(len(data)), data.labels].sum())


def loss(params: np.ndarray, data: Examples) -> float:
    """Mean softmax cross-entropy over ``data``."""
    return loss_sum(params, data) / len(data)


def gradient(params: np.ndarray, data: Examples) -> np.ndarray:
    """Analytic gradient of :func:`loss`, same layout as ``params``."""
    _check(params, data)
    n = len(data)
    z = logits(params, data.features)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), data.labels] -= 1.0
    p /= n
    return np.concatenate([(p.T @ data.features).ravel(), p.sum(axis=0)])


def loss_and_gradient(params: np.ndarray, data: Examples) -> tuple[float, np.ndarray]:
    return loss(params, data), gradient(params, data)


def sgd_step(params: np.ndarray, data: Examples, eta: float, batch_size: int | None = None,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """One gradient step; full batch unless ``batch_size`` is given (then ``rng`` is required)."""
    batch = data
    if batch_size is not None and batch_size < len(data):
        if rng is None:
            raise InvalidArgument("minibatch steps need an rng")
        batch = data.take(np.sort(rng.choice(len(data), size=batch_size, replace=False)))
    return params - eta * gradient(params, batch)


def weighted_average(models: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Convex combination accumulated in the given (ascending node) order."""
    if len(models) == 0 or len(models) != len(weights):
        raise InvalidArgument("need one weight per model and at least one model")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise InvalidArgument("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgument(f"weights sum to {w.sum()!r}, not 1")
    size = np.asarray(models[0]).shape
    acc = np.zeros(size)
    for m, wi in zip(models, w):
        if np.asarray(m).shape != size:
            raise InvalidArgument("models differ in dimension")
        acc += wi * m
    return acc


def predict(params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Arg-max class; ties resolve to the lowest class index."""
    return np.argmax(logits(params, features), axis=1)


def correct_count(params: np.ndarray, data: Examples) -> int:
    _check(params, data)
    return int((predict(params, data.features) == data.labels).sum())


def accuracy(params: np.ndarray, data: Examples) -> float:
    return correct_count(params, data) / len(data)


def to_bytes(params: np.ndarray) -> bytes:
    return np.asarray(params, dtype="<f8").tobytes()


def from_bytes(buf: bytes, num_classes: int, feature_dim: int) -> np.ndarray:
    n = param_count(num_classes, feature_dim)
    if len(buf) != BYTES_PER_PARAM * n:
        raise InvalidArgument(f"expected {BYTES_PER_PARAM * n} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


CHECKPOINT_MAGIC = b"TORN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")


def checkpoint_bytes(models: Sequence[np.ndarray], num_classes: int, feature_dim: int, step: int) -> bytes:
    """Header (magic, version, K, d_in, step) then each model's little-endian float64 payload."""
    head = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, num_classes, feature_dim, step)
    body = b"".join(to_bytes(m) for m in models)
    if len(body) != len(models) * model_bytes(num_classes, feature_dim):
        raise InvalidArgument("model size does not match K and d_in")
    return head + body


def read_checkpoint(buf: bytes) -> tuple[int, int, int, list[np.ndarray]]:
    if len(buf) < _CKPT_HEADER.size:
        raise InvalidArgument("truncated checkpoint header")
    magic, version, k, d, step = _CKPT_HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidArgument("bad checkpoint magic")
    if version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    size = model_bytes(k, d)
    body = buf[_CKPT_HEADER.size:]
    if len(body) % size:
        raise InvalidArgument("checkpoint body is not a whole number of models")
    models = [from_bytes(body[i:i + size], k, d) for i in range(0, len(body), size)]
    return k, d, step, models
