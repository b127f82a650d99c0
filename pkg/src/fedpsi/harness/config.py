"""Experiment configuration: one JSON document, every default made explicit.

Example::

    {
      "dataset": {"synthetic": {"num_classes": 4, "examples_per_class": 1000,
                                "dims": 2, "class_separation": 6.0,
                                "noise_sigma": 0.5, "seed": 0}},
      "grid": {"dirichlet": [0.3, 50]},
      "k_list": [10],
      "methods": ["FedAvg", "ClustPsiPfl"],
      "num_seeds": 2,
      "train": {"rounds": 15},
      "output_dir": "runs/demo"
    }

``dataset`` may instead be ``{"csv": {"path": "...", "label_column": "label"}}``;
a relative path is resolved against the config file's directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..datasets import Dataset, SyntheticSpec, generate_synthetic, load_csv
from ..divergence import DEFAULT_EPSILON
from ..errors import FedPsiError, SpecError
from ..federation.training import Method, TrainConfig

PROTOCOLS = ("dirichlet", "similarity")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("method", "seed"))

DEFAULT_SYNTHETIC = {
    "num_classes": 4,
    "examples_per_class": 1000,
    "dims": 2,
    "class_separation": 6.0,
    "noise_sigma": 0.5,
    "seed": 0,
}
# Desk scale: fewer rounds than the library default of 40.
DEFAULT_TRAIN = {"rounds": 15}


class ConfigError(SpecError):
    """The experiment configuration is malformed."""


def _default_train() -> dict:
    return dict(DEFAULT_TRAIN)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    grid: dict
    k_list: tuple[int, ...] = (10, 20)
    methods: tuple[str, ...] = ("FedAvg", "ClustPsiPfl")
    num_seeds: int = 5
    train: dict = field(default_factory=_default_train)
    epsilon: float = DEFAULT_EPSILON
    test_fraction: float = 0.2
    min_samples_per_client: int = 2
    seed: int = 0
    output_dir: str = "runs"
    base_dir: str = "."

    def __post_init__(self) -> None:
        self._check()

    def _check(self) -> None:
        if set(self.dataset) not in ({"synthetic"}, {"csv"}):
            raise ConfigError('dataset must hold exactly one of "synthetic" or "csv"')
        if not isinstance(self.grid, dict) or not self.grid:
            raise ConfigError("grid must be a non-empty mapping protocol -> parameter list")
        for proto, values in self.grid.items():
            if proto not in PROTOCOLS:
                raise ConfigError(f"unknown protocol {proto!r}; expected one of {PROTOCOLS}")
            if not values:
                raise ConfigError(f"grid for {proto} is empty")
            for v in values:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                    raise ConfigError(f"grid value {v!r} for {proto} is not a finite number")
        if not self.k_list or any(not isinstance(k, int) or k < 2 for k in self.k_list):
            raise ConfigError("k_list must be a non-empty list of integers >= 2")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        for m in self.methods:
            try:
                Method(m)
            except ValueError:
                raise ConfigError(f"unknown method {m!r}; expected one of {[x.value for x in Method]}") from None
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods contain duplicates")
        if not isinstance(self.num_seeds, int) or self.num_seeds < 1:
            raise ConfigError("num_seeds must be an integer >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        unknown = set(self.train) - set(TRAIN_KEYS)
        if unknown:
            raise ConfigError(f"unknown train keys {sorted(unknown)}")
        try:
            self.train_config(Method.FEDAVG, 0)
        except SpecError as exc:
            raise ConfigError(f"train: {exc}") from None
        if "synthetic" in self.dataset:
            try:
                self.synthetic_spec().validate()
            except (TypeError, SpecError) as exc:
                raise ConfigError(f"dataset.synthetic: {exc}") from None
        else:
            csv = self.dataset["csv"]
            if not isinstance(csv, dict) or "path" not in csv:
                raise ConfigError('dataset.csv needs a "path"')

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**{**DEFAULT_SYNTHETIC, **self.dataset["synthetic"]})

    def train_config(self, method: Method | str, seed: int) -> TrainConfig:
        return TrainConfig(**self.train, method=Method(method), seed=seed)

    def cells(self) -> list[tuple[str, float, int, int]]:
        """Grid cells ``(protocol, parameter, k, seed)`` in canonical order."""
        return [
            (proto, float(p), int(k), r)
            for proto, values in self.grid.items()
            for p in values
            for k in self.k_list
            for r in range(self.num_seeds)
        ]

    def load_dataset(self) -> Dataset:
        if "synthetic" in self.dataset:
            return generate_synthetic(self.synthetic_spec())
        csv = self.dataset["csv"]
        path = Path(csv["path"])
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        return load_csv(path, csv.get("label_column", "label"), csv.get("classes"))

    def resolved(self) -> dict:
        """The configuration with every default filled in, as written to manifests."""
        doc = asdict(self)
        doc.pop("base_dir")
        doc["k_list"] = list(self.k_list)
        doc["methods"] = list(self.methods)
        if "synthetic" in self.dataset:
            doc["dataset"] = {"synthetic": asdict(self.synthetic_spec())}
        doc["train"] = {k: v for k, v in self.train_config(Method.FEDAVG, 0).to_dict().items() if k in TRAIN_KEYS}
        return doc


def config_from_dict(doc: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "dataset" not in doc:
        doc = {**doc, "dataset": {"synthetic": {}}}
    if "grid" not in doc:
        raise ConfigError('config needs a "grid"')
    args = dict(doc)
    for key in ("k_list", "methods"):
        if key in args:
            if not isinstance(args[key], list):
                raise ConfigError(f"{key} must be a list")
            args[key] = tuple(args[key])
    if "train" in args and not isinstance(args["train"], dict):
        raise ConfigError("train must be an object")
    try:
        return ExperimentConfig(**args, base_dir=str(base_dir))
    except ConfigError:
        raise
    except (TypeError, ValueError, FedPsiError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc, base_dir=path.parent)
