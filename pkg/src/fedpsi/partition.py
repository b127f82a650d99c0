"""Label-skew partition protocols: Dirichlet(alpha) and Similarity(S).

Both protocols return an unsplit :class:`ClientPartition` (all apportioned
indices in ``train``); :func:`split_train_test` then carves a per-client test
split out of it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import InfeasiblePartition, RangeError
from .seeding import derive_seed

MAX_ATTEMPTS = 100


def _as_index_tuple(lists) -> tuple[np.ndarray, ...]:
    out = []
    for idx in lists:
        arr = np.sort(np.asarray(idx, dtype=np.int64))
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ClientPartition:
    """Client id -> example indices, with an optional per-client test split.

    Index arrays are stored sorted ascending. ``protocol`` is ``"dirichlet"``
    or ``"similarity"`` and ``parameter`` the matching alpha or S.
    """

    num_clients: int
    train_indices: tuple[np.ndarray, ...]
    test_indices: tuple[np.ndarray, ...]
    protocol: str
    parameter: float
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_indices", _as_index_tuple(self.train_indices))
        object.__setattr__(self, "test_indices", _as_index_tuple(self.test_indices))
        if len(self.train_indices) != self.num_clients or len(self.test_indices) != self.num_clients:
            raise ValueError("one train and one test index list per client required")

    @property
    def is_split(self) -> bool:
        return all(t.size > 0 for t in self.test_indices)

    def client_indices(self, client_id: int) -> np.ndarray:
        """All indices held by ``client_id`` (train and test), ascending."""
        return np.sort(np.concatenate([self.train_indices[client_id], self.test_indices[client_id]]))

    def sizes(self) -> list[int]:
        return [int(a.size + b.size) for a, b in zip(self.train_indices, self.test_indices)]

    def validate(self, num_examples: int | None = None) -> None:
        """Raise ``ValueError`` unless the client lists are valid disjoint index sets."""
        everything = np.concatenate([*self.train_indices, *self.test_indices])
        if np.unique(everything).size != everything.size:
            raise ValueError("index lists overlap")
        if everything.size and everything.min() < 0:
            raise ValueError("negative index")
        if num_examples is not None and everything.size and everything.max() >= num_examples:
            raise ValueError("index out of range")
        if any(t.size == 0 for t in self.train_indices):
            raise ValueError("a client has no training examples")
        test_sizes = [t.size for t in self.test_indices]
        if any(test_sizes) and not all(test_sizes):
            raise ValueError("only some clients have a test split")

    def to_json(self) -> str:
        doc = {
            "num_clients": self.num_clients,
            "protocol": self.protocol,
            "parameter": self.parameter,
            "seed": self.seed,
            "clients": [
                {"id": i, "train": self.train_indices[i].tolist(), "test": self.test_indices[i].tolist()}
                for i in range(self.num_clients)
            ],
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClientPartition":
        doc = json.loads(text)
        clients = sorted(doc["clients"], key=lambda c: c["id"])
        if [c["id"] for c in clients] != list(range(doc["num_clients"])):
            raise ValueError("client ids must be 0..num_clients-1")
        return cls(
            num_clients=int(doc["num_clients"]),
            train_indices=tuple(c["train"] for c in clients),
            test_indices=tuple(c["test"] for c in clients),
            protocol=str(doc["protocol"]),
            parameter=float(doc["parameter"]),
            seed=int(doc["seed"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ClientPartition":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _min_required(min_samples_per_client: int) -> int:
    return max(2, int(min_samples_per_client))


def partition_dirichlet(
    data: Dataset,
    k: int,
    alpha: float,
    seed: int,
    min_samples_per_client: int = 2,
) -> ClientPartition:
    """Per-class Dirichlet apportionment of examples over ``k`` clients.

    For every class a proportion vector ``p ~ Dir(alpha * 1_k)`` is drawn and the
    class's (shuffled) examples are split by ``Multinomial(n_c, p)`` counts. If
    some client ends up with fewer than ``max(2, min_samples_per_client)``
    examples the draw is repeated with a fresh sub-seed, at most 100 times.

    Raises:
        RangeError: ``k < 2`` or ``alpha <= 0``.
        InfeasiblePartition: no feasible draw within the retry budget.
    """
    if k < 2:
        raise RangeError(f"need k >= 2 clients, got {k}")
    if not (alpha > 0 and math.isfinite(alpha)):
        raise RangeError(f"alpha must be positive and finite, got {alpha}")
    need = _min_required(min_samples_per_client)
    if data.num_examples < need * k:
        raise InfeasiblePartition(f"{data.num_examples} examples cannot give {k} clients {need} each")

    by_class = [np.flatnonzero(data.labels == c) for c in range(data.num_classes)]
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(derive_seed(seed, "dirichlet", attempt))
        buckets: list[list[np.ndarray]] = [[] for _ in range(k)]
        ok = True
        for idx in by_class:
            props = rng.dirichlet(np.full(k, alpha))
            if not np.all(np.isfinite(props)) or props.sum() <= 0:
                ok = False
                break
            props = props / props.sum()
            counts = rng.multinomial(idx.size, props)
            shuffled = rng.permutation(idx)
            for client, piece in enumerate(np.split(shuffled, np.cumsum(counts)[:-1])):
                buckets[client].append(piece)
        if not ok:
            continue
        clients = [np.concatenate(b) for b in buckets]
        if min(c.size for c in clients) >= need:
            return ClientPartition(
                num_clients=k,
                train_indices=tuple(clients),
                test_indices=tuple(np.empty(0, np.int64) for _ in range(k)),
                protocol="dirichlet",
                parameter=float(alpha),
                seed=int(seed),
            )
    raise InfeasiblePartition(
        f"Dirichlet(alpha={alpha}) over k={k} clients: no draw gave every client >= {need} "
        f"examples in {MAX_ATTEMPTS} attempts"
    )


def partition_similarity(
    data: Dataset,
    k: int,
    s: float,
    seed: int,
    min_samples_per_client: int = 2,
) -> ClientPartition:
    """IID share ``floor(s*N)`` dealt round-robin, remainder as label-sorted shards.

    The IID subset is a uniformly random ``floor(s*N)``-subset in random order,
    client ``i`` receiving positions ``i, i+k, ...``. The rest is sorted by
    (label, index) and cut into ``k`` contiguous near-equal shards, shard ``i``
    going to client ``i``.
    """
    if k < 2:
        raise RangeError(f"need k >= 2 clients, got {k}")
    if not 0.0 <= s <= 1.0:
        raise RangeError(f"s must lie in [0, 1], got {s}")
    n = data.num_examples
    rng = np.random.default_rng(derive_seed(seed, "similarity"))
    order = rng.permutation(n)
    n_iid = int(math.floor(s * n + 1e-9))
    iid, rest = order[:n_iid], order[n_iid:]
    rest = np.sort(rest)
    rest = rest[np.argsort(data.labels[rest], kind="stable")]
    shards = np.array_split(rest, k)
    clients = [np.concatenate([iid[i::k], shards[i]]) for i in range(k)]
    need = _min_required(min_samples_per_client)
    short = [i for i, c in enumerate(clients) if c.size < need]
    if short:
        raise InfeasiblePartition(
            f"Similarity(S={s}) over k={k} clients leaves clients {short} with fewer than {need} examples"
        )
    return ClientPartition(
        num_clients=k,
        train_indices=tuple(clients),
        test_indices=tuple(np.empty(0, np.int64) for _ in range(k)),
        protocol="similarity",
        parameter=float(s),
        seed=int(seed),
    )


def partition(data: Dataset, protocol: str, parameter: float, k: int, seed: int, **kwargs) -> ClientPartition:
    if protocol == "dirichlet":
        return partition_dirichlet(data, k, parameter, seed, **kwargs)
    if protocol == "similarity":
        return partition_similarity(data, k, parameter, seed, **kwargs)
    raise RangeError(f"unknown protocol {protocol!r}")


def holdout_count(n: int, fraction: float) -> int:
    """Test-set size for a client with ``n`` examples: ceil, clamped to ``[1, n-1]``."""
    raw = math.ceil(round(fraction * n, 9))
    return min(max(raw, 1), n - 1)


def _stratified_quota(class_counts: np.ndarray, n_test: int) -> np.ndarray:
    # Largest-remainder allocation; each class keeps >= 1 training example.
    n = class_counts.sum()
    cap = np.maximum(class_counts - 1, 0)
    ideal = n_test * class_counts / n
    quota = np.minimum(np.floor(ideal).astype(np.int64), cap)
    remainder = ideal - quota
    for c in np.lexsort((np.arange(class_counts.size), -remainder)):
        if quota.sum() >= n_test:
            break
        if quota[c] < cap[c]:
            quota[c] += 1
    # Classes may not have enough spare examples; fill the rest greedily.
    for c in range(class_counts.size):
        while quota.sum() < n_test and quota[c] < cap[c]:
            quota[c] += 1
    return quota


def split_train_test(part: ClientPartition, labels, test_fraction: float, seed: int) -> ClientPartition:
    """Split every client's examples into train/test.

    A client holding ``n`` examples gets ``holdout_count(n, test_fraction)`` test
    examples. When some class has at least two examples on the client, the test
    quota is drawn per class (largest remainder) so that every class keeps at
    least one training example; otherwise the split is plain uniform.

    Raises:
        RangeError: ``test_fraction`` outside (0, 1).
        InfeasiblePartition: a client holds fewer than 2 examples.
    """
    if not 0.0 < test_fraction < 1.0:
        raise RangeError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    train_out, test_out = [], []
    for client in range(part.num_clients):
        idx = part.client_indices(client)
        if idx.size < 2:
            raise InfeasiblePartition(f"client {client} has {idx.size} example(s); cannot split")
        rng = np.random.default_rng(derive_seed(seed, "split", client))
        n_test = holdout_count(idx.size, test_fraction)
        client_labels = labels[idx]
        classes, counts = np.unique(client_labels, return_counts=True)
        if counts.max() >= 2:
            quota = _stratified_quota(counts, n_test)
            picked = []
            for cls, q in zip(classes, quota):
                members = idx[client_labels == cls]
                if q:
                    picked.append(rng.choice(members, size=int(q), replace=False))
            test = np.concatenate(picked) if picked else np.empty(0, np.int64)
            if test.size < n_test:
                spare = np.setdiff1d(idx, test)
                test = np.concatenate([test, rng.choice(spare, size=n_test - test.size, replace=False)])
        else:
            test = rng.choice(idx, size=n_test, replace=False)
        train_out.append(np.setdiff1d(idx, test))
        test_out.append(test)
    return ClientPartition(
        num_clients=part.num_clients,
        train_indices=tuple(train_out),
        test_indices=tuple(test_out),
        protocol=part.protocol,
        parameter=part.parameter,
        seed=part.seed,
    )
