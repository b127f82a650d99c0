"""Labeled datasets: synthetic Gaussian blobs and CSV ingestion.

Labels are always dense integers ``0..C-1``. Original class names survive
only as ``Dataset.class_names`` so that a CSV can be written back out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestError, RangeError, SpecError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus dense labels.

    Attributes:
        features: ``(N, D)`` float64 array.
        labels: ``(N,)`` int64 array with values in ``0..num_classes-1``.
        num_classes: number of classes ``C``; every class occurs at least once.
        class_names: label strings, indexed by class id.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise SpecError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise SpecError(f"labels shape {labels.shape} does not match {features.shape[0]} rows")
        c = int(self.num_classes)
        if c < 1:
            raise SpecError("num_classes must be >= 1")
        if labels.size < c:
            raise SpecError(f"need at least N >= C examples, got N={labels.size}, C={c}")
        if labels.min() < 0 or labels.max() >= c:
            raise SpecError(f"labels must lie in [0, {c - 1}]")
        if np.any(np.bincount(labels, minlength=c) == 0):
            raise SpecError("every class must occur at least once")
        if not np.all(np.isfinite(features)):
            raise SpecError("features contain non-finite values")
        names = tuple(self.class_names) or tuple(str(i) for i in range(c))
        if len(names) != c:
            raise SpecError(f"{len(names)} class names for {c} classes")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", c)
        object.__setattr__(self, "class_names", names)

    @property
    def num_examples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dims(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(features, labels)`` rows for ``indices``."""
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    examples_per_class: int
    dims: int
    class_separation: float
    noise_sigma: float
    seed: int

    def validate(self) -> None:
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.examples_per_class < 1:
            raise SpecError("examples_per_class must be >= 1")
        if self.dims < 1:
            raise SpecError("dims must be >= 1")
        if not (self.class_separation >= 0 and math.isfinite(self.class_separation)):
            raise SpecError("class_separation must be a finite nonnegative number")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise SpecError("noise_sigma must be a finite nonnegative number")


def class_means(num_classes: int, dims: int, separation: float) -> np.ndarray:
    """Place ``num_classes`` blob centers in ``dims`` dimensions.

    With ``dims >= num_classes`` the centers are scaled basis vectors, so every
    pair is exactly ``separation`` apart. With fewer dimensions equidistance is
    impossible; centers go on a line (``dims == 1``) or a regular polygon in the
    first two axes, and ``separation`` is the distance between neighbours.
    """
    means = np.zeros((num_classes, dims))
    if dims >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
    elif dims == 1:
        means[:, 0] = separation * np.arange(num_classes)
    else:
        radius = separation / (2.0 * math.sin(math.pi / num_classes))
        angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian blobs, class-major row order."""
    spec.validate()
    rng = np.random.default_rng(int(spec.seed) & ((1 << 64) - 1))
    means = class_means(spec.num_classes, spec.dims, spec.class_separation)
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.examples_per_class)
    noise = rng.standard_normal((labels.size, spec.dims))
    features = means[labels] + spec.noise_sigma * noise
    return Dataset(features=features, labels=labels, num_classes=spec.num_classes)


def load_csv(path, label_column: str, classes: list[str] | None = None) -> Dataset:
    """Read a header-first CSV with numeric features and one label column.

    Labels are re-encoded densely in first-appearance order, unless ``classes``
    fixes the ordering explicitly. Feature columns keep their file order.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: no such file")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise IngestError(f"{path}: cannot read CSV ({exc})") from exc
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise IngestError(f"{path}: empty file (header row required)")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise IngestError(f"{path}: label column {label_column!r} not in header {header}")
    label_pos = header.index(label_column)
    feature_cols = [i for i in range(len(header)) if i != label_pos]

    encoding: dict[str, int] = {}
    if classes is not None:
        encoding = {str(name): i for i, name in enumerate(classes)}
    features: list[list[float]] = []
    labels: list[int] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestError(f"{path}: row {line_no} has {len(row)} cells, expected {len(header)}")
        values = []
        for col in feature_cols:
            cell = row[col].strip()
            try:
                value = float(cell)
            except ValueError:
                raise IngestError(
                    f"{path}: row {line_no}, column {header[col]!r}: "
                    f"non-numeric feature value {cell!r}"
                ) from None
            if not math.isfinite(value):
                raise IngestError(f"{path}: row {line_no}, column {header[col]!r}: non-finite value {cell!r}")
            values.append(value)
        name = row[label_pos].strip()
        if name == "":
            raise IngestError(f"{path}: row {line_no}, column {label_column!r}: blank label")
        if name not in encoding:
            if classes is not None:
                raise IngestError(f"{path}: row {line_no}: label {name!r} not among the given classes")
            encoding[name] = len(encoding)
        features.append(values)
        labels.append(encoding[name])
    if not labels:
        raise IngestError(f"{path}: empty file (no data rows)")
    names = sorted(encoding, key=encoding.__getitem__)
    try:
        return Dataset(
            features=np.array(features, dtype=np.float64).reshape(len(labels), len(feature_cols)),
            labels=np.array(labels, dtype=np.int64),
            num_classes=len(names),
            class_names=tuple(names),
        )
    except SpecError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def write_csv(data: Dataset, path, label_column: str = "label", feature_names: list[str] | None = None) -> None:
    """Write ``data`` as CSV, features at 17 significant digits."""
    names = feature_names or [f"x{i}" for i in range(data.dims)]
    if len(names) != data.dims:
        raise SpecError(f"{len(names)} feature names for {data.dims} dims")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, label_column])
        for row, label in zip(data.features, data.labels):
            writer.writerow([*(f"{v:.17g}" for v in row), data.class_names[label]])


def label_histogram(labels, num_classes: int) -> np.ndarray:
    """Per-class counts of ``labels`` as an int64 vector of length ``num_classes``."""
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        bad = arr[(arr < 0) | (arr >= num_classes)][0]
        raise RangeError(f"label {bad} outside [0, {num_classes - 1}]")
    return np.bincount(arr, minlength=num_classes).astype(np.int64)
