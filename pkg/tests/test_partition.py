from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from fedpsi.datasets import SyntheticSpec, generate_synthetic, label_histogram
from fedpsi.divergence import federation_metric
from fedpsi.errors import InfeasiblePartition, RangeError
from fedpsi.partition import (
    ClientPartition,
    holdout_count,
    partition,
    partition_dirichlet,
    partition_similarity,
    split_train_test,
)


def blobs(c, per_class, seed=0):
    return generate_synthetic(SyntheticSpec(c, per_class, 2, 3.0, 1.0, seed=seed))


def hists(data, part, split="all"):
    out = []
    for c in range(part.num_clients):
        idx = part.client_indices(c) if split == "all" else part.train_indices[c]
        out.append(label_histogram(data.labels[idx], data.num_classes))
    return out


def assert_disjoint_cover(part, n, expected=None):
    everything = np.concatenate([*part.train_indices, *part.test_indices])
    assert np.unique(everything).size == everything.size
    assert everything.min() >= 0 and everything.max() < n
    if expected is not None:
        assert np.array_equal(np.sort(everything), np.sort(expected))


def test_dirichlet_huge_alpha_is_near_uniform():
    data = blobs(2, 2000)
    part = partition_dirichlet(data, 4, 1e6, seed=3)
    glob = label_histogram(data.labels, 2) / data.num_examples
    for h in hists(data, part):
        np.testing.assert_allclose(h / h.sum(), glob, rtol=0.10)


def test_dirichlet_tiny_alpha_mostly_infeasible():
    data = blobs(2, 10)
    failures = 0
    for seed in range(10):
        try:
            partition_dirichlet(data, 10, 0.05, seed)
        except InfeasiblePartition:
            failures += 1
    assert failures >= 6


def test_dirichlet_skew_decreases_with_alpha():
    data = blobs(4, 1000)
    low = federation_metric(hists(data, partition_dirichlet(data, 10, 0.3, 5)), "wpsi")
    high = federation_metric(hists(data, partition_dirichlet(data, 10, 50.0, 5)), "wpsi")
    assert low > high


def test_dirichlet_is_deterministic_and_covers_everything():
    data = blobs(3, 100, seed=2)
    a = partition_dirichlet(data, 6, 0.5, seed=9)
    b = partition_dirichlet(data, 6, 0.5, seed=9)
    assert a.to_json() == b.to_json()
    assert_disjoint_cover(a, data.num_examples, np.arange(data.num_examples))
    assert min(a.sizes()) >= 2
    assert partition_dirichlet(data, 6, 0.5, seed=10).to_json() != a.to_json()


def test_dirichlet_honours_min_samples():
    data = blobs(3, 100)
    part = partition_dirichlet(data, 5, 1.0, seed=1, min_samples_per_client=30)
    assert min(part.sizes()) >= 30
    with pytest.raises(InfeasiblePartition):
        partition_dirichlet(data, 5, 1.0, seed=1, min_samples_per_client=61)


@pytest.mark.parametrize("k,alpha", [(1, 1.0), (3, 0.0), (3, -1.0), (3, float("inf"))])
def test_dirichlet_argument_checks(k, alpha):
    with pytest.raises(RangeError):
        partition_dirichlet(blobs(2, 5), k, alpha, seed=0)


def test_similarity_full_iid_matches_global():
    data = blobs(4, 500)
    part = partition_similarity(data, 5, 1.0, seed=4)
    for h in hists(data, part):
        assert chisquare(h, np.full(4, h.sum() / 4)).pvalue > 0.01


def test_similarity_zero_gives_one_label_per_client():
    data = blobs(3, 40)
    part = partition_similarity(data, 3, 0.0, seed=0)
    for c, h in enumerate(hists(data, part)):
        assert np.count_nonzero(h) == 1
        assert h[c] == 40


def test_similarity_small_s_is_pathological():
    data = blobs(10, 100)
    part = partition_similarity(data, 10, 0.03, seed=1)
    for h in hists(data, part):
        top_two = np.sort(h)[-2:].sum()
        assert top_two / h.sum() >= 0.9


def test_similarity_layout_is_round_robin_then_shards():
    data = blobs(2, 7)
    part = partition_similarity(data, 3, 0.5, seed=2)
    assert_disjoint_cover(part, 14, np.arange(14))
    # floor(0.5 * 14) = 7 IID examples dealt 3/2/2, then 7 sorted examples split 3/2/2
    assert part.sizes() == [6, 4, 4]


def test_similarity_infeasible_and_range():
    data = blobs(2, 3)
    with pytest.raises(InfeasiblePartition):
        partition_similarity(data, 4, 0.0, seed=0)
    with pytest.raises(RangeError):
        partition_similarity(data, 2, 1.5, seed=0)


def test_partition_dispatch():
    data = blobs(2, 20)
    assert partition(data, "similarity", 0.0, 2, 0).protocol == "similarity"
    assert partition(data, "dirichlet", 1.0, 2, 0).parameter == 1.0
    with pytest.raises(RangeError):
        partition(data, "quantity", 1.0, 2, 0)


@pytest.mark.parametrize("n,f,expected", [(10, 0.2, 2), (2, 0.2, 1), (2, 0.9, 1), (11, 0.2, 3), (5, 0.2, 1), (100, 0.3, 30)])
def test_holdout_count(n, f, expected):
    assert holdout_count(n, f) == expected


def _single(labels):
    labels = np.asarray(labels)
    empty = np.empty(0, np.int64)
    return ClientPartition(1, (np.arange(labels.size),), (empty,), "similarity", 0.0, 0), labels


def test_split_ten_examples():
    part, labels = _single([0] * 5 + [1] * 5)
    s = split_train_test(part, labels, 0.2, seed=1)
    assert (s.train_indices[0].size, s.test_indices[0].size) == (8, 2)
    assert sorted(labels[s.test_indices[0]].tolist()) == [0, 1]


def test_split_two_examples():
    part, labels = _single([0, 1])
    for f in (0.05, 0.5, 0.95):
        s = split_train_test(part, labels, f, seed=0)
        assert (s.train_indices[0].size, s.test_indices[0].size) == (1, 1)


def test_split_stratified_keeps_both_classes_in_train():
    part, labels = _single([0] * 8 + [1] * 2)
    for seed in range(25):
        s = split_train_test(part, labels, 0.2, seed)
        assert set(labels[s.train_indices[0]].tolist()) == {0, 1}
        assert s.test_indices[0].size == 2


def test_split_rejects_single_example_client():
    empty = np.empty(0, np.int64)
    part = ClientPartition(2, ([0], [1, 2]), (empty, empty), "dirichlet", 1.0, 0)
    with pytest.raises(InfeasiblePartition):
        split_train_test(part, [0, 1, 1], 0.2, 0)
    with pytest.raises(RangeError):
        split_train_test(part, [0, 1, 1], 1.0, 0)


@given(st.integers(2, 8), st.floats(0.0, 1.0), st.integers(0, 2**32), st.floats(0.05, 0.6))
def test_split_partition_properties(k, s, seed, frac):
    data = blobs(3, 12)
    raw = partition_similarity(data, k, s, seed)
    part = split_train_test(raw, data.labels, frac, seed)
    part.validate(data.num_examples)
    assert part.is_split
    assert_disjoint_cover(part, data.num_examples, np.arange(data.num_examples))
    for c in range(k):
        assert part.test_indices[c].size == holdout_count(raw.train_indices[c].size, frac)


def test_json_round_trip_and_byte_stability(tmp_path):
    data = blobs(3, 30)
    part = split_train_test(partition_dirichlet(data, 4, 0.7, 3), data.labels, 0.25, 3)
    path = tmp_path / "p.json"
    part.save(path)
    back = ClientPartition.load(path)
    assert back.to_json() == part.to_json()
    assert all(np.array_equal(a, b) for a, b in zip(back.test_indices, part.test_indices))
    text = part.to_json()
    assert text.index('"id":0') < text.index('"id":1')


def test_validate_rejects_overlap():
    empty = np.empty(0, np.int64)
    part = ClientPartition(2, ([0, 1], [1, 2]), (empty, empty), "dirichlet", 1.0, 0)
    with pytest.raises(ValueError, match="overlap"):
        part.validate()


def test_monotone_skew_over_grids():
    data = blobs(4, 1000)
    for protocol, grid in (("dirichlet", [0.05, 0.09, 0.2, 0.3, 0.7, 50]), ("similarity", [0, 0.03, 0.3, 0.7, 1])):
        medians = []
        for p in grid:
            vals = [federation_metric(hists(data, partition(data, protocol, p, 10, s)), "wpsi") for s in range(20)]
            medians.append(np.median(vals))
        assert all(a >= b for a, b in zip(medians, medians[1:])), (protocol, medians)
