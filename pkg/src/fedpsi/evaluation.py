"""Client and federation accuracy plus the AD/SDAD fairness statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datasets import Dataset
from .errors import EmptyShard
from .federation.models import ModelParameters, predict
from .partition import ClientPartition


@dataclass(frozen=True)
class ClientAccuracy:
    client_id: int
    n_test: int
    accuracy: float


@dataclass(frozen=True)
class AccuracyReport:
    per_client: tuple[ClientAccuracy, ...]
    global_accuracy: float
    ad: float
    sdad: float

    @classmethod
    def from_clients(cls, per_client: Sequence[ClientAccuracy]) -> "AccuracyReport":
        per_client = tuple(sorted(per_client, key=lambda c: c.client_id))
        acc = [c.accuracy for c in per_client]
        ad, sdad = fairness(acc)
        return cls(
            per_client=per_client,
            global_accuracy=global_accuracy([(c.n_test, c.accuracy) for c in per_client]),
            ad=ad,
            sdad=sdad,
        )

    def accuracies(self) -> list[float]:
        return [c.accuracy for c in self.per_client]


def local_accuracy(model: ModelParameters, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of ``(x, y)`` classified correctly (argmax, ties to the smaller id)."""
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyShard("cannot score an empty shard")
    return float(np.count_nonzero(predict(model, x) == y) / y.size)


def global_accuracy(per_client: Sequence[tuple[int, float]]) -> float:
    """Test-count weighted mean of client accuracies."""
    if not per_client:
        raise ValueError("no clients")
    n = np.array([p[0] for p in per_client], dtype=np.float64)
    a = np.array([p[1] for p in per_client], dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError("test counts must be positive")
    return float(np.sum(n * a) / np.sum(n))


def fairness(accuracies: Sequence[float]) -> tuple[float, float]:
    """Average distance to perfect accuracy and its population std.

    ``AD = mean |A_i - 1|`` and ``SDAD = sqrt(mean (|A_i - 1| - AD)^2)``, both
    unweighted over clients.
    """
    if len(accuracies) == 0:
        raise ValueError("no clients")
    d = np.abs(np.asarray(accuracies, dtype=np.float64) - 1.0)
    ad = float(d.mean())
    sdad = math.sqrt(float(np.mean((d - ad) ** 2)))
    return ad, sdad


def ecdf_export(accuracies: Sequence[float]) -> list[tuple[float, float]]:
    """Step points ``(A_(i), i/K)`` of the empirical CDF; ties keep the top fraction."""
    if len(accuracies) == 0:
        raise ValueError("no clients")
    a = np.sort(np.asarray(accuracies, dtype=np.float64))
    k = a.size
    points: list[tuple[float, float]] = []
    for i, v in enumerate(a, start=1):
        if points and points[-1][0] == v:
            points[-1] = (float(v), i / k)
        else:
            points.append((float(v), i / k))
    return points


def evaluate_clients(
    data: Dataset,
    part: ClientPartition,
    models: ModelParameters | Mapping[int, ModelParameters],
    clients: Sequence[int] | None = None,
) -> AccuracyReport:
    """Score every client's test split with its model.

    ``models`` is one shared model, or a ``client_id -> model`` mapping (each
    client scored by its own cluster's model).
    """
    ids = range(part.num_clients) if clients is None else clients
    out = []
    for c in ids:
        model = models if isinstance(models, ModelParameters) else models[c]
        idx = part.test_indices[c]
        out.append(ClientAccuracy(int(c), int(idx.size), local_accuracy(model, data.features[idx], data.labels[idx])))
    return AccuracyReport.from_clients(out)
