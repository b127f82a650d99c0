"""Client clustering on PSI feature rows.

Each client row ``[psi_total, psi_1..psi_C]`` is standardized column-wise,
then K-means++ is run for every candidate count ``j = 2..K-1`` and the count
with the highest mean silhouette wins (earliest ``j`` on ties).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .divergence import PsiFeatures
from .errors import RangeError, ShapeError
from .seeding import derive_seed

MAX_ITERS = 100
RESTARTS = 16
TOLERANCE = 1e-8
TIE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    standardized: bool = False
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    client_ids: tuple[int, ...] = ()

    @property
    def num_points(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Selected cluster count ``tau`` and the client -> cluster map.

    ``labels[i]`` is the cluster of ``client_ids[i]``. ``candidates`` holds every
    ``(j, silhouette)`` pair evaluated during selection, empty for a single
    K-means run. ``sse`` is the within-cluster sum of squares.
    """

    tau: int
    labels: np.ndarray
    silhouette: float
    centroids: np.ndarray
    sse: float = float("nan")
    client_ids: tuple[int, ...] = ()
    candidates: tuple[tuple[int, float], ...] = field(default=())

    def members(self, cluster: int) -> list[int]:
        return [cid for cid, lab in zip(self.client_ids, self.labels) if lab == cluster]

    def cluster_of(self) -> dict[int, int]:
        return {cid: int(lab) for cid, lab in zip(self.client_ids, self.labels)}

    def report(self) -> dict:
        """Plot-ready cluster report (the JSON document written by the harness)."""
        return {
            "tau": int(self.tau),
            "silhouette": float(self.silhouette),
            "assignments": [{"client_id": int(c), "cluster": int(l)} for c, l in zip(self.client_ids, self.labels)],
            "candidates": [{"j": int(j), "silhouette": float(s)} for j, s in self.candidates],
        }

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2) + "\n"


def build_features(features: Sequence[PsiFeatures]) -> FeatureMatrix:
    """Stack PSI rows in ascending client-id order."""
    if not features:
        raise ShapeError("no clients")
    ordered = sorted(features, key=lambda f: f.client_id)
    widths = {f.psi_per_class.size for f in ordered}
    if len(widths) != 1:
        raise ShapeError(f"clients disagree on the number of classes: {sorted(widths)}")
    rows = np.array([f.row for f in ordered], dtype=np.float64)
    return FeatureMatrix(rows=rows, client_ids=tuple(int(f.client_id) for f in ordered))


def standardize(x: FeatureMatrix) -> FeatureMatrix:
    """Column-wise z-scores with population std; constant columns become zeros."""
    rows = x.rows
    if rows.shape[0] < 2:
        raise RangeError("standardization needs at least two rows")
    means = rows.mean(axis=0)
    centered = rows - means
    stds = np.sqrt(np.mean(centered**2, axis=0))
    # Columns whose spread is pure rounding noise count as constant.
    scale = np.maximum(np.abs(means), 1.0)
    degenerate = stds <= 1e-12 * scale
    safe = np.where(degenerate, 1.0, stds)
    z = np.where(degenerate, 0.0, centered / safe)
    return FeatureMatrix(rows=z, standardized=True, means=means, stds=stds, client_ids=x.client_ids)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _batched_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """``(R, n, j)`` squared distances from ``points`` to each run's ``centers`` via the norm expansion."""
    cross = points @ centers.transpose(0, 2, 1)
    d2 = np.sum(points**2, axis=1)[None, :, None] - 2.0 * cross + np.sum(centers**2, axis=2)[:, None, :]
    return np.maximum(d2, 0.0)


def _seed_centers(points: np.ndarray, j: int, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """K-means++ seeding for ``restarts`` independent runs at once: ``(R, j)`` point indices."""
    n = points.shape[0]
    chosen = np.empty((restarts, j), dtype=np.int64)
    chosen[:, 0] = rng.integers(n, size=restarts)
    closest = _sq_dists(points[chosen[:, 0]], points)
    for step in range(1, j):
        total = closest.sum(axis=1)
        u = rng.random(restarts) * total
        cum = np.cumsum(closest, axis=1)
        # first index whose cumulative weight exceeds u, so zero-weight points are never drawn
        pick = np.minimum(np.sum(cum <= u[:, None], axis=1), n - 1)
        for r in np.flatnonzero(total <= 0):
            # every point coincides with a chosen center; take an unused point uniformly
            free = np.setdiff1d(np.arange(n), chosen[r, :step])
            pick[r] = free[rng.integers(free.size)]
        chosen[:, step] = pick
        closest = np.minimum(closest, _sq_dists(points[pick], points))
    return chosen


def _repair_empty(points: np.ndarray, labels: np.ndarray, centers: np.ndarray, j: int) -> np.ndarray:
    """Refill empty clusters, each with the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=j)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels
    labels = labels.copy()
    own = np.sum((points - centers[labels]) ** 2, axis=1)
    order = np.lexsort((np.arange(own.size), -own))
    fill = iter(empty)
    target = next(fill)
    for i in order:
        if counts[labels[i]] < 2:
            continue
        counts[labels[i]] -= 1
        labels[i] = target
        counts[target] += 1
        target = next(fill, None)
        if target is None:
            break
    return labels


def _exact_centers(points: np.ndarray, labels: np.ndarray, j: int) -> np.ndarray:
    # Offsets from a member point, so a cluster of identical rows has that row as its centroid.
    onehot = (labels[:, :, None] == np.arange(j)).astype(np.float64)
    ref = points[np.argmax(onehot, axis=1)]
    offsets = points[None, :, :] - np.take_along_axis(ref, labels[:, :, None], axis=1)
    return ref + (onehot.transpose(0, 2, 1) @ offsets) / onehot.sum(axis=1)[:, :, None]


def _move_gains(points, labels, centers, counts) -> tuple[np.ndarray, np.ndarray]:
    """SSE decrease of each point's best single move and its removal cost, both ``(R, n)``."""
    d2 = _batched_sq_dists(points, centers)
    own = np.take_along_axis(counts, labels, axis=1)
    own_d2 = np.take_along_axis(d2, labels[:, :, None], axis=2)[:, :, 0]
    leave = np.where(own > 1, own / np.maximum(own - 1, 1) * own_d2, -np.inf)
    join = (counts / (counts + 1))[:, None, :] * d2
    np.put_along_axis(join, labels[:, :, None], np.inf, axis=2)
    return leave - join.min(axis=2), leave


def _hartigan(points: np.ndarray, labels: np.ndarray, centers: np.ndarray, max_passes: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-point moves that strictly lower SSE, batched over runs.

    Lloyd can stall where moving one point would still help, because it ignores
    how the move shifts both centroids; this pass accounts for that. Each pass
    screens every point at once and then moves the candidates one at a time.
    """
    runs, j, _ = centers.shape
    labels = labels.copy()
    centers = centers.copy()
    counts = np.stack([np.bincount(row, minlength=j) for row in labels]).astype(np.float64)
    r_idx = np.arange(runs)
    for _ in range(max_passes):
        gain, leave = _move_gains(points, labels, centers, counts)
        candidates = np.flatnonzero(np.any(gain > 1e-12 * np.maximum(leave, 1.0), axis=0))
        if candidates.size == 0:
            break
        for i in candidates:
            x = points[i]
            a = labels[:, i]
            d2 = np.sum((centers - x) ** 2, axis=2)
            n_a = counts[r_idx, a]
            leave_i = np.where(n_a > 1, n_a / np.maximum(n_a - 1, 1) * d2[r_idx, a], -np.inf)
            join = counts / (counts + 1) * d2
            join[r_idx, a] = np.inf
            b = np.argmin(join, axis=1)
            go = np.flatnonzero(leave_i - join[r_idx, b] > 1e-12 * np.maximum(leave_i, 1.0))
            if go.size == 0:
                continue
            ga, gb = a[go], b[go]
            na, nb = counts[go, ga], counts[go, gb]
            centers[go, ga] = (na[:, None] * centers[go, ga] - x) / (na - 1)[:, None]
            centers[go, gb] = (nb[:, None] * centers[go, gb] + x) / (nb + 1)[:, None]
            counts[go, ga] -= 1
            counts[go, gb] += 1
            labels[go, i] = gb
        centers = _exact_centers(points, labels, j)
    return labels, _exact_centers(points, labels, j)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched Lloyd iterations; ``centers`` is ``(R, j, d)``. Returns labels, centers, SSE per run.

    A point stays in its current cluster when that cluster ties for nearest,
    and centroids are accumulated relative to a member point so that a
    cluster of identical points has exactly that point as its centroid.
    Without both, duplicate rows make the assignment churn between equal centers.
    """
    runs, j, _ = centers.shape
    n = points.shape[0]
    centers = centers.copy()
    labels = np.full((runs, n), -1, dtype=np.int64)
    active = np.ones(runs, dtype=bool)
    clusters = np.arange(j)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        c = centers[idx]
        d2 = _batched_sq_dists(points, c)
        lab = np.argmin(d2, axis=2)
        prev = labels[idx]
        has_prev = prev >= 0
        prev_d = np.take_along_axis(d2, np.maximum(prev, 0)[:, :, None], axis=2)[:, :, 0]
        keep = has_prev & (prev_d <= np.take_along_axis(d2, lab[:, :, None], axis=2)[:, :, 0])
        lab = np.where(keep, prev, lab)
        onehot = lab[:, :, None] == clusters
        for pos in np.flatnonzero(~onehot.any(axis=1).all(axis=1)):
            lab[pos] = _repair_empty(points, lab[pos], c[pos], j)
            onehot[pos] = lab[pos][:, None] == clusters
        new = _exact_centers(points, lab, j)
        shift = np.max(np.sqrt(np.sum((new - c) ** 2, axis=2)), axis=1)
        centers[idx] = new
        labels[idx] = lab
        active[idx[shift < TOLERANCE]] = False
    labels, centers = _hartigan(points, labels, centers, max_iters)
    resid = points[None, :, :] - np.take_along_axis(centers, labels[:, :, None], axis=1)
    sse = np.sum(resid**2, axis=(1, 2))
    return labels, centers, sse


def _canonical(labels: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Renumber clusters by first appearance so equal partitions compare equal.
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = np.empty(centers.shape[0], dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[labels], centers[order]


def kmeans_pp(
    x: FeatureMatrix | np.ndarray,
    j: int,
    seed: int,
    max_iters: int = MAX_ITERS,
    restarts: int = RESTARTS,
) -> ClusterAssignment:
    """Best-of-``restarts`` Lloyd runs from K-means++ seeding, by SSE.

    The restarts run side by side as one batched array computation; the
    earliest restart wins ties in SSE.
    """
    points = x.rows if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    client_ids = x.client_ids if isinstance(x, FeatureMatrix) else ()
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 2 <= j <= n - 1:
        raise RangeError(f"cluster count j={j} outside [2, {n - 1}]")
    rng = np.random.default_rng(derive_seed(seed, "kmeans", j))
    restarts = max(1, restarts)
    seeds = _seed_centers(points, j, restarts, rng)
    labels, centers, sse = _lloyd(points, points[seeds], max_iters)
    best = int(np.argmin(sse))
    lab, cen = _canonical(labels[best], centers[best])
    return ClusterAssignment(
        tau=j,
        labels=lab,
        silhouette=float("nan"),
        centroids=cen,
        sse=float(sse[best]),
        client_ids=tuple(client_ids) or tuple(range(n)),
    )


def silhouette_score(x: FeatureMatrix | np.ndarray, labels) -> float:
    """Mean silhouette with Euclidean distance; singletons and ``a == b == 0`` score 0."""
    points = x.rows if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    clusters, own = np.unique(labels, return_inverse=True)
    if clusters.size < 2:
        raise RangeError("silhouette needs at least two clusters")
    n = points.shape[0]
    dist = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    onehot = (own[:, None] == np.arange(clusters.size)).astype(np.float64)
    sums = dist @ onehot
    sizes = onehot.sum(axis=0)
    rows = np.arange(n)
    own_size = sizes[own]
    a = sums[rows, own] / np.maximum(own_size - 1, 1)
    means = sums / sizes
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size < 2] = 0.0
    return float(s.mean())


def select_tau(features: Sequence[PsiFeatures] | FeatureMatrix, seed: int) -> ClusterAssignment:
    """Choose the cluster count by maximum silhouette over ``j = 2..K-1``."""
    matrix = features if isinstance(features, FeatureMatrix) else build_features(features)
    k = matrix.num_points
    if k < 3:
        raise RangeError(f"cluster selection needs K >= 3 clients, got {k}")
    if not matrix.standardized:
        matrix = standardize(matrix)
    best_score = -np.inf
    best = None
    candidates = []
    for j in range(2, k):
        fit = kmeans_pp(matrix, j, derive_seed(seed, "select_tau", j))
        score = silhouette_score(matrix, fit.labels)
        candidates.append((j, score))
        if score > best_score + TIE_EPS:
            best_score, best = score, fit
    return ClusterAssignment(
        tau=best.tau,
        labels=best.labels,
        silhouette=best_score,
        centroids=best.centroids,
        sse=best.sse,
        client_ids=matrix.client_ids or tuple(range(k)),
        candidates=tuple(candidates),
    )
