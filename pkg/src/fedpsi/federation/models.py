"""Flat-vector classifiers: multinomial logistic regression and a ReLU MLP.

Parameters travel as one float64 vector so that aggregation is plain vector
arithmetic. Layout (row-major):

    linear: W (C x D), b (C)
    mlp:    W1 (H x D), b1 (H), W2 (C x H), b2 (C)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class ModelShape:
    kind: str
    dims: int
    num_classes: int
    hidden: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "mlp"):
            raise ShapeError(f"unknown model kind {self.kind!r}")
        if self.kind == "mlp" and self.hidden < 1:
            raise ShapeError("mlp needs hidden >= 1")

    @property
    def size(self) -> int:
        d, c, h = self.dims, self.num_classes, self.hidden
        if self.kind == "linear":
            return c * d + c
        return h * d + h + c * h + c

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": self.dims, "num_classes": self.num_classes, "hidden": self.hidden}


@dataclass(frozen=True, eq=False)
class ModelParameters:
    values: np.ndarray
    shape: ModelShape

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != self.shape.size:
            raise ShapeError(f"{values.size} values for a {self.shape.kind} model needing {self.shape.size}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("parameters contain non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def checksum(self) -> str:
        return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()[:16]

    def with_values(self, values: np.ndarray) -> "ModelParameters":
        return ModelParameters(values, self.shape)


def init_params(shape: ModelShape, seed: int) -> ModelParameters:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    d, c, h = shape.dims, shape.num_classes, shape.hidden
    if shape.kind == "linear":
        w = rng.uniform(-1.0, 1.0, size=(c, d)) / np.sqrt(d)
        return ModelParameters(np.concatenate([w.ravel(), np.zeros(c)]), shape)
    w1 = rng.uniform(-1.0, 1.0, size=(h, d)) / np.sqrt(d)
    w2 = rng.uniform(-1.0, 1.0, size=(c, h)) / np.sqrt(h)
    return ModelParameters(np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)]), shape)


def _unpack(values: np.ndarray, shape: ModelShape):
    d, c, h = shape.dims, shape.num_classes, shape.hidden
    if shape.kind == "linear":
        return values[: c * d].reshape(c, d), values[c * d :]
    o = 0
    w1 = values[o : o + h * d].reshape(h, d); o += h * d
    b1 = values[o : o + h]; o += h
    w2 = values[o : o + c * h].reshape(c, h); o += c * h
    b2 = values[o : o + c]
    return w1, b1, w2, b2


def scores(params: ModelParameters, x: np.ndarray) -> np.ndarray:
    """Class logits, ``(n, C)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.shape.dims:
        raise ShapeError(f"inputs of shape {x.shape} do not match {params.shape.dims} dims")
    if params.shape.kind == "linear":
        w, b = _unpack(params.values, params.shape)
        return x @ w.T + b
    w1, b1, w2, b2 = _unpack(params.values, params.shape)
    return np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2


def predict(params: ModelParameters, x: np.ndarray) -> np.ndarray:
    # argmax breaks ties toward the smaller class id
    return np.argmax(scores(params, x), axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(
    values: np.ndarray,
    shape: ModelShape,
    x: np.ndarray,
    y: np.ndarray,
    prox_mu: float = 0.0,
    prox_center: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the flat parameters.

    With ``prox_mu > 0`` the FedProx term ``mu/2 * ||w - prox_center||^2`` is added.
    """
    n = x.shape[0]
    onehot = np.zeros((n, shape.num_classes))
    onehot[np.arange(n), y] = 1.0
    if shape.kind == "linear":
        w, b = _unpack(values, shape)
        logp = _log_softmax(x @ w.T + b)
        delta = (np.exp(logp) - onehot) / n
        grad = np.concatenate([(delta.T @ x).ravel(), delta.sum(axis=0)])
    else:
        w1, b1, w2, b2 = _unpack(values, shape)
        pre = x @ w1.T + b1
        hid = np.maximum(pre, 0.0)
        logp = _log_softmax(hid @ w2.T + b2)
        delta = (np.exp(logp) - onehot) / n
        dhid = (delta @ w2) * (pre > 0)
        grad = np.concatenate([(dhid.T @ x).ravel(), dhid.sum(axis=0), (delta.T @ hid).ravel(), delta.sum(axis=0)])
    loss = float(-np.sum(logp * onehot) / n)
    if prox_mu:
        diff = values - prox_center
        loss += 0.5 * prox_mu * float(diff @ diff)
        grad = grad + prox_mu * diff
    return loss, grad


def save_params(params: ModelParameters, path) -> None:
    """Write a JSON header line followed by little-endian float64 values."""
    header = json.dumps({"shape": params.shape.to_dict(), "count": int(params.values.size), "dtype": "<f8"})
    with Path(path).open("wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> ModelParameters:
    blob = Path(path).read_bytes()
    head, _, body = blob.partition(b"\n")
    meta = json.loads(head.decode("utf-8"))
    values = np.frombuffer(body, dtype="<f8", count=meta["count"])
    return ModelParameters(values.astype(np.float64), ModelShape(**meta["shape"]))
