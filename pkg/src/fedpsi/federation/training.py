"""Round-based federated training for the baseline methods and Clust-PSI-PFL.

All randomness is drawn from named sub-seeds of ``TrainConfig.seed``:

* ``("init",)``                            initial parameters (shared by every method)
* ``("sample", federation, round)``        client sampling per round
* ``("batches", client, round)``           local mini-batch order
* ``("central", epoch)``                   centralized baseline batch order

so a run is reproducible irrespective of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from ..clustering import ClusterAssignment, select_tau
from ..datasets import Dataset, label_histogram
from ..divergence import DEFAULT_EPSILON, client_psi_features
from ..errors import DivergedError, RangeError, ShapeError, SpecError
from ..partition import ClientPartition
from ..seeding import derive_seed
from .models import ModelParameters, ModelShape, init_params, loss_and_grad, predict


class Method(str, Enum):
    FEDAVG = "FedAvg"
    FEDPROX = "FedProx"
    FEDAVGM = "FedAvgM"
    CLUST_PSI_PFL = "ClustPsiPfl"
    CENTRALIZED = "Centralized"


DEFAULT_LR = {"linear": 0.05, "mlp": 0.01}


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 40
    client_fraction: float = 0.5
    local_epochs: int = 5
    batch_size: int = 32
    learning_rate: float | None = None
    method: Method = Method.FEDAVG
    mu: float = 0.01
    momentum: float = 0.7
    server_lr: float = 1.0
    model: str = "linear"
    hidden: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if self.rounds < 1:
            raise SpecError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise SpecError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")
        if not 0.0 < self.client_fraction <= 1.0:
            raise SpecError("client_fraction must lie in (0, 1]")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise SpecError("learning_rate must be positive")
        if self.mu < 0:
            raise SpecError("FedProx mu must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise SpecError("momentum must lie in [0, 1)")
        if not self.server_lr > 0:
            raise SpecError("server_lr must be positive")
        if self.model not in DEFAULT_LR:
            raise SpecError(f"unknown model {self.model!r}")

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR[self.model]

    def model_shape(self, data: Dataset) -> ModelShape:
        hidden = self.hidden if self.model == "mlp" else 0
        return ModelShape(self.model, data.dims, data.num_classes, hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["learning_rate"] = self.lr
        return d


@dataclass
class RoundLog:
    round: int
    participating_clients: list[int]
    global_params_checksum: str
    global_accuracy: float
    federation: int | None = None
    weight_sum: float = 1.0
    per_cluster: list[tuple[int, float]] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def sample_size(pool_size: int, fraction: float) -> int:
    """``max(1, round(q * pool))`` with halves rounded up."""
    return max(1, min(pool_size, int(math.floor(fraction * pool_size + 0.5))))


def _sgd_epoch(values, shape, x, y, order, cfg: TrainConfig, prox_mu, prox_center, where: str):
    lr = cfg.lr
    for start in range(0, order.size, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        loss, grad = loss_and_grad(values, shape, x[batch], y[batch], prox_mu, prox_center)
        if not math.isfinite(loss):
            raise DivergedError(f"non-finite loss ({loss}) {where}")
        values = values - lr * grad
        if not np.all(np.isfinite(values)):
            raise DivergedError(f"non-finite parameters {where}")
    return values


def local_train(
    params: ModelParameters,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    client_id: int = 0,
    round_index: int = 0,
) -> ModelParameters:
    """Run ``cfg.local_epochs`` epochs of mini-batch gradient descent on one shard.

    The batch order depends only on ``(cfg.seed, client_id, round_index)``. For
    FedProx the loss carries ``mu/2 * ||w - w_start||^2`` with ``w_start`` the
    received global parameters. ``params`` is not modified.

    Raises:
        DivergedError: the loss or the parameters become non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError(f"client {client_id} has an empty training shard")
    shape = params.shape
    prox_mu = cfg.mu if cfg.method is Method.FEDPROX else 0.0
    center = params.values if prox_mu else None
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches", client_id, round_index))
    values = params.values.copy()
    where = f"on client {client_id} in round {round_index}"
    for _ in range(cfg.local_epochs):
        values = _sgd_epoch(values, shape, x, y, rng.permutation(y.size), cfg, prox_mu, center, where)
    return ModelParameters(values, shape)


def fedavg_weights(counts: Sequence[int]) -> np.ndarray:
    n = np.asarray(counts, dtype=np.float64)
    if n.size == 0 or np.any(n <= 0):
        raise ValueError("sample counts must be positive")
    return n / n.sum()


def fedavg_aggregate(updates: Sequence[tuple[ModelParameters, int]]) -> ModelParameters:
    """Sample-weighted mean ``sum_i (n_i / N) w_i``, accumulated in list order.

    Computed as ``w_0 + sum_i (n_i / N)(w_i - w_0)``, which is the same mean but
    returns identical updates (and a single update) bit-exactly.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    shape = updates[0][0].shape
    for p, _ in updates:
        if p.shape != shape:
            raise ShapeError(f"cannot aggregate {p.shape} with {shape}")
    weights = fedavg_weights([n for _, n in updates])
    base = updates[0][0].values
    acc = np.zeros_like(base)
    for (p, _), w in zip(updates, weights):
        acc += w * (p.values - base)
    return ModelParameters(base + acc, shape)


def fedavgm_server_update(
    global_params: ModelParameters,
    aggregate: ModelParameters,
    velocity: np.ndarray,
    momentum: float,
    server_lr: float,
) -> tuple[ModelParameters, np.ndarray]:
    """Server momentum step.

    ``delta = global - aggregate``, ``v' = momentum * v + delta`` and
    ``new = global - server_lr * v'``.
    """
    if global_params.shape != aggregate.shape or np.shape(velocity) != global_params.values.shape:
        raise ShapeError("server update received mismatched shapes")
    g = global_params.values
    a = aggregate.values
    delta = g - a
    v_new = momentum * np.asarray(velocity) + delta
    # Algebraically g - lr*v'; written around the aggregate so that
    # momentum=0, server_lr=1 returns the aggregate bit-for-bit.
    new = a - server_lr * momentum * np.asarray(velocity) - (server_lr - 1.0) * delta
    return ModelParameters(new, global_params.shape), v_new


def client_data(data: Dataset, part: ClientPartition, client: int, split: str = "train"):
    idx = part.train_indices[client] if split == "train" else part.test_indices[client]
    return data.features[idx], data.labels[idx]


def pooled_accuracy(params: ModelParameters, data: Dataset, part: ClientPartition, clients: Sequence[int]) -> float:
    idx = [part.test_indices[c] for c in clients if part.test_indices[c].size]
    if not idx:
        idx = [part.train_indices[c] for c in clients]
    idx = np.concatenate(idx)
    return float(np.mean(predict(params, data.features[idx]) == data.labels[idx]))


def run_federation(
    data: Dataset,
    part: ClientPartition,
    pool: Sequence[int],
    cfg: TrainConfig,
    init: ModelParameters | None = None,
    federation: int | None = None,
) -> tuple[ModelParameters, list[RoundLog]]:
    """Train one global model over ``pool`` for ``cfg.rounds`` rounds.

    Each round samples ``sample_size(|pool|, q)`` clients uniformly without
    replacement, trains them locally from the current global model and
    aggregates per ``cfg.method``. The logged
    accuracy is the global model's accuracy on the pool's pooled test data.
    """
    pool = sorted(int(c) for c in pool)
    if not pool:
        raise ValueError("empty client pool")
    if cfg.method not in (Method.FEDAVG, Method.FEDPROX, Method.FEDAVGM):
        raise SpecError(f"run_federation cannot run method {cfg.method.value}")
    params = init if init is not None else init_params(cfg.model_shape(data), derive_seed(cfg.seed, "init"))
    velocity = np.zeros_like(params.values)
    tag = "global" if federation is None else f"cluster{federation}"
    m = sample_size(len(pool), cfg.client_fraction)
    logs: list[RoundLog] = []
    for t in range(cfg.rounds):
        rng = np.random.default_rng(derive_seed(cfg.seed, "sample", tag, t))
        chosen = sorted(int(c) for c in rng.choice(pool, size=m, replace=False))
        updates = []
        for c in chosen:
            x, y = client_data(data, part, c)
            try:
                updates.append((local_train(params, x, y, cfg, c, t), int(y.size)))
            except DivergedError as exc:
                raise DivergedError(f"{exc} (federation {tag})", client_id=c, round_index=t) from exc
        aggregate = fedavg_aggregate(updates)
        if cfg.method is Method.FEDAVGM:
            params, velocity = fedavgm_server_update(params, aggregate, velocity, cfg.momentum, cfg.server_lr)
        else:
            params = aggregate
        acc = pooled_accuracy(params, data, part, pool)
        logs.append(
            RoundLog(
                round=t,
                participating_clients=chosen,
                global_params_checksum=params.checksum(),
                global_accuracy=acc,
                federation=federation,
                weight_sum=float(fedavg_weights([n for _, n in updates]).sum()),
                per_cluster=None if federation is None else [(federation, acc)],
            )
        )
    return params, logs


def train_histograms(data: Dataset, part: ClientPartition) -> list[np.ndarray]:
    return [label_histogram(data.labels[idx], data.num_classes) for idx in part.train_indices]


def run_clust_psi_pfl(
    data: Dataset,
    part: ClientPartition,
    cfg: TrainConfig,
    epsilon: float = DEFAULT_EPSILON,
    cluster_seed: int = 0,
    init: ModelParameters | None = None,
) -> tuple[list[tuple[int, ModelParameters]], ClusterAssignment, list[RoundLog]]:
    """Cluster clients on PSI features and train one FedAvg federation per cluster.

    Only the clients' train-split label histograms reach the clustering step.
    Every cluster runs the full ``cfg.rounds`` with its own q-sampling stream,
    starting from the same initial parameters.
    """
    if part.num_clients < 3:
        raise RangeError(f"Clust-PSI-PFL needs K >= 3 clients, got {part.num_clients}")
    features = client_psi_features(train_histograms(data, part), epsilon)
    assignment = select_tau(features, cluster_seed)
    fed_cfg = replace(cfg, method=Method.FEDAVG)
    if init is None:
        init = init_params(cfg.model_shape(data), derive_seed(cfg.seed, "init"))
    models = []
    logs: list[RoundLog] = []
    for c in range(assignment.tau):
        members = assignment.members(c)
        params, cluster_logs = run_federation(data, part, members, fed_cfg, init=init, federation=c)
        models.append((c, params))
        logs.extend(cluster_logs)
    return models, assignment, logs


def centralized_baseline(
    data: Dataset,
    cfg: TrainConfig,
    train_indices: np.ndarray | None = None,
) -> ModelParameters:
    """One model on the pooled training data for ``rounds * local_epochs`` epochs."""
    idx = np.arange(data.num_examples) if train_indices is None else np.asarray(train_indices, dtype=np.int64)
    x, y = data.features[idx], data.labels[idx]
    params = init_params(cfg.model_shape(data), derive_seed(cfg.seed, "init"))
    values = params.values.copy()
    ccfg = replace(cfg, method=Method.CENTRALIZED)
    for epoch in range(cfg.rounds * cfg.local_epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, "central", epoch))
        values = _sgd_epoch(values, params.shape, x, y, rng.permutation(y.size), ccfg, 0.0, None,
                            f"in centralized epoch {epoch}")
    return ModelParameters(values, params.shape)
