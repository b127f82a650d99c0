"""Label-distribution divergences computed from client label histograms.

PSI between the global label pmf ``P`` and a client pmf ``Q`` is

    PSI = sum_c (P_c - Q_c) * ln(P_c / Q_c)

(the Jeffreys divergence). Its per-class terms are each nonnegative and are
kept separately because they form the clustering features. The federation
score WPSI is the sample-weighted mean of client PSI values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import EmptyFederation, NeedsSmoothing, ShapeError

DEFAULT_EPSILON = 1e-6


class Metric(str, Enum):
    WPSI = "wpsi"
    HD = "hd"
    JSD = "jsd"
    EMD = "emd"


@dataclass(frozen=True, eq=False)
class PsiFeatures:
    """PSI of one client against the global pmf, with its per-class terms."""

    client_id: int
    psi_total: float
    psi_per_class: np.ndarray
    sample_count: int

    @property
    def row(self) -> np.ndarray:
        """Clustering feature row ``[psi_total, psi_1, ..., psi_C]``."""
        return np.concatenate([[self.psi_total], self.psi_per_class])


def as_pmf(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("a pmf is a non-empty 1-D vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("pmf entries must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"pmf entries sum to {p.sum()!r}, not 1")
    return p


def histogram_pmf(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyFederation("histogram has zero total count")
    return counts / total


def _stack(histograms: Sequence) -> np.ndarray:
    if len(histograms) == 0:
        raise EmptyFederation("no client histograms")
    sizes = {len(h) for h in histograms}
    if len(sizes) != 1:
        raise ShapeError(f"histograms have differing lengths {sorted(sizes)}")
    return np.asarray([np.asarray(h, dtype=np.float64) for h in histograms])


def global_pmf(histograms: Sequence) -> np.ndarray:
    """Pooled label pmf: per-class totals over the grand total."""
    counts = _stack(histograms)
    total = counts.sum()
    if total <= 0:
        raise EmptyFederation("federation holds no samples")
    return counts.sum(axis=0) / total


def smooth(pmf, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Additive smoothing ``(p + eps) / (1 + C*eps)``; all entries become positive."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p = np.asarray(pmf, dtype=np.float64)
    return (p + epsilon) / (1.0 + p.size * epsilon)


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"pmf shapes differ: {p.shape} vs {q.shape}")
    return p, q


def psi_terms(global_probs, client_probs) -> np.ndarray:
    """Per-class PSI contributions; both pmfs must be strictly positive."""
    p, q = _check_pair(global_probs, client_probs)
    if np.any(p <= 0) or np.any(q <= 0):
        raise NeedsSmoothing("PSI needs strictly positive pmfs; smooth() them first")
    return (p - q) * np.log(p / q)


def psi_client(global_probs, client_probs, client_id: int = 0, sample_count: int = 0) -> PsiFeatures:
    terms = psi_terms(global_probs, client_probs)
    # Plain left-to-right sum so the total equals the sum of the stored terms.
    total = 0.0
    for t in terms:
        total += float(t)
    return PsiFeatures(client_id=client_id, psi_total=total, psi_per_class=terms, sample_count=int(sample_count))


def wpsi(features: Sequence[PsiFeatures]) -> float:
    """Sample-weighted mean of client PSI."""
    if not features:
        raise EmptyFederation("no clients")
    counts = np.array([f.sample_count for f in features], dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("every client needs a positive sample count")
    values = np.array([f.psi_total for f in features])
    return float(np.dot(counts / counts.sum(), values))


def client_psi_features(histograms: Sequence, epsilon: float = DEFAULT_EPSILON, client_ids=None) -> list[PsiFeatures]:
    """PSI features of every client against the smoothed pooled pmf.

    Only label histograms are needed: this is everything the server sees.
    """
    counts = _stack(histograms)
    reference = smooth(global_pmf(counts), epsilon)
    ids = list(range(len(counts))) if client_ids is None else list(client_ids)
    out = []
    for cid, h in zip(ids, counts):
        n = h.sum()
        if n <= 0:
            raise ValueError(f"client {cid} has an empty histogram")
        out.append(psi_client(reference, smooth(h / n, epsilon), client_id=cid, sample_count=int(n)))
    return out


def hellinger(global_probs, client_probs) -> float:
    p, q = _check_pair(global_probs, client_probs)
    bc = float(np.sum(np.sqrt(p * q)))
    return math.sqrt(min(1.0, max(0.0, 1.0 - bc)))


def jensen_shannon(global_probs, client_probs) -> float:
    """Jensen-Shannon distance, base-2 logs, so the value lies in [0, 1]."""
    p, q = _check_pair(global_probs, client_probs)
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))

    js = 0.5 * kl(p) + 0.5 * kl(q)
    return math.sqrt(min(1.0, max(0.0, js)))


def emd_label(global_probs, client_probs) -> float:
    """L1 distance between label pmfs (unit ground distance between classes)."""
    p, q = _check_pair(global_probs, client_probs)
    return float(np.sum(np.abs(p - q)))


_PAIRWISE = {Metric.HD: hellinger, Metric.JSD: jensen_shannon, Metric.EMD: emd_label}


def federation_metric(histograms: Sequence, metric: Metric | str, epsilon: float = DEFAULT_EPSILON) -> float:
    """Federation-level non-IID score from client histograms.

    WPSI uses smoothed pmfs. The distance metrics use raw pmfs and are reduced with
    the same ``n_i / N`` weights.
    """
    metric = Metric(metric)
    counts = _stack(histograms)
    if metric is Metric.WPSI:
        return wpsi(client_psi_features(counts, epsilon))
    reference = global_pmf(counts)
    sizes = counts.sum(axis=1)
    if np.any(sizes <= 0):
        raise ValueError("every client needs a positive sample count")
    dist = _PAIRWISE[metric]
    values = np.array([dist(reference, h / h.sum()) for h in counts])
    return float(np.dot(sizes / sizes.sum(), values))


def all_metrics(histograms: Sequence, epsilon: float = DEFAULT_EPSILON) -> dict[str, float]:
    return {m.value: federation_metric(histograms, m, epsilon) for m in Metric}
