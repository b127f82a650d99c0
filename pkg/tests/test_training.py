from __future__ import annotations

import numpy as np
import pytest

from fedpsi.datasets import SyntheticSpec, generate_synthetic
from fedpsi.errors import DivergedError, RangeError, ShapeError, SpecError
from fedpsi.evaluation import evaluate_clients
from fedpsi.federation import (
    Method,
    ModelParameters,
    ModelShape,
    TrainConfig,
    centralized_baseline,
    fedavg_aggregate,
    fedavgm_server_update,
    init_params,
    local_train,
    run_clust_psi_pfl,
    run_federation,
    sample_size,
)
from fedpsi.federation.training import fedavg_weights
from fedpsi.partition import partition, split_train_test
from fedpsi.seeding import derive_seed

SCALAR = ModelShape("linear", 1, 1)  # two parameters: one weight, one bias


def vec(*values):
    return ModelParameters(np.array(values, dtype=float), SCALAR)


def make_fed(protocol, parameter, k, seed=0, c=3, dims=1, per_class=100):
    data = generate_synthetic(SyntheticSpec(c, per_class, dims, 4.0, 0.5, seed=seed))
    part = split_train_test(partition(data, protocol, parameter, k, seed), data.labels, 0.2, seed)
    return data, part


def test_config_validation():
    for bad in (dict(rounds=0), dict(local_epochs=0), dict(batch_size=0), dict(client_fraction=0.0),
                dict(client_fraction=1.5), dict(mu=-1.0), dict(momentum=1.0), dict(server_lr=0.0),
                dict(model="svm"), dict(learning_rate=-0.1)):
        with pytest.raises(SpecError):
            TrainConfig(**bad)
    assert TrainConfig().lr == 0.05 and TrainConfig(model="mlp").lr == 0.01
    assert TrainConfig(method="FedProx").method is Method.FEDPROX
    d = TrainConfig().to_dict()
    assert (d["rounds"], d["client_fraction"], d["local_epochs"], d["batch_size"]) == (40, 0.5, 5, 32)


@pytest.mark.parametrize("pool,q,expected", [(10, 0.5, 5), (1, 0.5, 1), (3, 0.5, 2), (5, 0.1, 1), (7, 1.0, 7), (4, 0.3, 1)])
def test_sample_size(pool, q, expected):
    assert sample_size(pool, q) == expected


def test_aggregate_examples():
    w = vec(1.2, -3.4)
    assert fedavg_aggregate([(w, 7)]).values.tobytes() == w.values.tobytes()
    assert np.all(fedavg_aggregate([(vec(2.0, -1.0), 5), (vec(-2.0, 1.0), 5)]).values == 0.0)
    np.testing.assert_allclose(fedavg_aggregate([(vec(4.0, 4.0), 1), (vec(0.0, 0.0), 3)]).values, [1.0, 1.0])
    same = vec(0.1, 0.7)
    assert fedavg_aggregate([(same, 3), (same, 11), (same, 2)]).values.tobytes() == same.values.tobytes()
    with pytest.raises(ShapeError):
        fedavg_aggregate([(same, 1), (init_params(ModelShape("linear", 2, 2), 0), 1)])
    assert fedavg_weights([3, 5, 11]).sum() == pytest.approx(1.0, abs=1e-12)


def test_fedavgm_examples():
    g, a = vec(1.0, 2.0), vec(0.4, 2.5)
    new, v = fedavgm_server_update(g, a, np.zeros(2), momentum=0.0, server_lr=1.0)
    assert new.values.tobytes() == a.values.tobytes()
    new, v = fedavgm_server_update(g, g, np.zeros(2), momentum=0.7, server_lr=1.0)
    assert new.values.tobytes() == g.values.tobytes() and np.all(v == 0)
    with pytest.raises(ShapeError):
        fedavgm_server_update(g, a, np.zeros(3), 0.5, 1.0)


def test_fedavgm_two_step_hand_recursion():
    # w0 = 1, aggregates 0.6 then 0.5, momentum 0.7, server lr 1:
    # d1 = 0.4, v1 = 0.4, w1 = 0.6; d2 = 0.1, v2 = 0.38, w2 = 0.22
    w, v = vec(1.0, 0.0), np.zeros(2)
    w, v = fedavgm_server_update(w, vec(0.6, 0.0), v, 0.7, 1.0)
    assert w.values[0] == pytest.approx(0.6) and v[0] == pytest.approx(0.4)
    w, v = fedavgm_server_update(w, vec(0.5, 0.0), v, 0.7, 1.0)
    assert v[0] == pytest.approx(0.38) and w.values[0] == pytest.approx(0.22)


def test_local_train_single_example_single_update():
    shape = ModelShape("linear", 2, 2)
    p = init_params(shape, 0)
    x, y = np.array([[1.0, -1.0]]), np.array([1])
    out = local_train(p, x, y, TrainConfig(local_epochs=1), client_id=3, round_index=0)
    from fedpsi.federation import loss_and_grad

    expected = p.values - 0.05 * loss_and_grad(p.values, shape, x, y)[1]
    assert out.values.tobytes() == expected.tobytes()
    assert p.values.tobytes() == init_params(shape, 0).values.tobytes()


def test_fedprox_zero_mu_matches_fedavg_locally():
    data, part = make_fed("dirichlet", 0.5, 4)
    p = init_params(TrainConfig().model_shape(data), 1)
    x, y = data.features[part.train_indices[0]], data.labels[part.train_indices[0]]
    a = local_train(p, x, y, TrainConfig(seed=4), 0, 2)
    b = local_train(p, x, y, TrainConfig(seed=4, method="FedProx", mu=0.0), 0, 2)
    c = local_train(p, x, y, TrainConfig(seed=4, method="FedProx", mu=0.5), 0, 2)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values.tobytes() != c.values.tobytes()


def test_divergence_is_reported_with_client_and_round():
    data, part = make_fed("similarity", 1.0, 3)
    cfg = TrainConfig(rounds=3, learning_rate=1e308, client_fraction=1.0)
    with pytest.raises(DivergedError) as info, np.errstate(all="ignore"):
        run_federation(data, part, range(3), cfg)
    assert info.value.client_id is not None and info.value.round_index == 0
    assert "client" in str(info.value) and "round" in str(info.value)


def test_round_logs_and_determinism():
    data, part = make_fed("dirichlet", 1.0, 10)
    cfg = TrainConfig(rounds=3, seed=8)
    a_params, a_logs = run_federation(data, part, range(10), cfg)
    b_params, b_logs = run_federation(data, part, range(10), cfg)
    assert a_params.values.tobytes() == b_params.values.tobytes()
    assert [l.to_dict() for l in a_logs] == [l.to_dict() for l in b_logs]
    assert [len(l.participating_clients) for l in a_logs] == [5, 5, 5]
    assert all(abs(l.weight_sum - 1.0) <= 1e-12 for l in a_logs)
    assert a_logs[-1].global_params_checksum == a_params.checksum()


def test_single_client_federation_is_local_training():
    data, part = make_fed("similarity", 1.0, 2)
    cfg = TrainConfig(rounds=1, client_fraction=1.0, seed=2)
    init = init_params(cfg.model_shape(data), derive_seed(2, "init"))
    params, logs = run_federation(data, part, [1], cfg)
    x, y = data.features[part.train_indices[1]], data.labels[part.train_indices[1]]
    assert params.values.tobytes() == local_train(init, x, y, cfg, 1, 0).values.tobytes()
    assert logs[0].participating_clients == [1]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_baselines_reduce_to_fedavg_bitwise(seed):
    data, part = make_fed("dirichlet", 0.3, 8, seed=seed)
    base = TrainConfig(rounds=5, seed=seed)
    ref, ref_logs = run_federation(data, part, range(8), base)
    for variant in (TrainConfig(rounds=5, seed=seed, method="FedProx", mu=0.0),
                    TrainConfig(rounds=5, seed=seed, method="FedAvgM", momentum=0.0, server_lr=1.0)):
        got, logs = run_federation(data, part, range(8), variant)
        assert got.values.tobytes() == ref.values.tobytes()
        assert [l.global_params_checksum for l in logs] == [l.global_params_checksum for l in ref_logs]


def test_fedavgm_with_momentum_differs():
    data, part = make_fed("dirichlet", 0.3, 8)
    a, _ = run_federation(data, part, range(8), TrainConfig(rounds=3))
    b, _ = run_federation(data, part, range(8), TrainConfig(rounds=3, method="FedAvgM"))
    assert a.values.tobytes() != b.values.tobytes()


def test_near_iid_fedavg_tracks_centralized():
    data = generate_synthetic(SyntheticSpec(2, 200, 2, 4.0, 0.5, seed=1))
    part = split_train_test(partition(data, "dirichlet", 50.0, 8, 1), data.labels, 0.2, 1)
    cfg = TrainConfig(rounds=15, seed=1)
    fed, _ = run_federation(data, part, range(8), cfg)
    train = np.concatenate(part.train_indices)
    central = centralized_baseline(data, TrainConfig(rounds=15, seed=1, method="Centralized"), train)
    a = evaluate_clients(data, part, fed).global_accuracy
    b = evaluate_clients(data, part, central).global_accuracy
    assert abs(a - b) <= 0.03


def test_clust_psi_pfl_on_label_sorted_shards():
    data, part = make_fed("similarity", 0.0, 12, per_class=200)
    cfg = TrainConfig(rounds=10, learning_rate=0.5)
    models, assignment, logs = run_clust_psi_pfl(data, part, cfg, cluster_seed=0)
    assert assignment.tau == 3
    for c, params in models:
        members = assignment.members(c)
        assert len({int(data.labels[part.train_indices[m][0]]) for m in members}) == 1
        assert evaluate_clients(data, part, params, members).global_accuracy >= 0.95
    # each round log belongs to exactly one cluster, whose members it samples
    for entry in logs:
        assert set(entry.participating_clients) <= set(assignment.members(entry.federation))
        assert entry.per_cluster == [(entry.federation, entry.global_accuracy)]


def test_clust_psi_pfl_needs_three_clients():
    data, part = make_fed("similarity", 1.0, 2)
    with pytest.raises(RangeError):
        run_clust_psi_pfl(data, part, TrainConfig(rounds=1))


def test_clust_psi_pfl_severe_dirichlet_gain():
    data = generate_synthetic(SyntheticSpec(4, 1000, 1, 4.0, 0.5, seed=0))
    part = split_train_test(partition(data, "dirichlet", 0.1, 20, 0), data.labels, 0.2, 0)
    cfg = TrainConfig(rounds=10, learning_rate=0.5)
    fed, _ = run_federation(data, part, range(20), cfg)
    models, assignment, _ = run_clust_psi_pfl(data, part, cfg, cluster_seed=0)
    per_client = {cid: dict(models)[c] for cid, c in assignment.cluster_of().items()}
    gain = evaluate_clients(data, part, per_client).global_accuracy - evaluate_clients(data, part, fed).global_accuracy
    assert gain >= 0.05


def test_centralized_examples():
    data = generate_synthetic(SyntheticSpec(3, 30, 2, 5.0, 0.0, seed=0))
    cfg = TrainConfig(rounds=5, seed=3, method="Centralized", learning_rate=0.5)
    a, b = centralized_baseline(data, cfg), centralized_baseline(data, cfg)
    assert a.values.tobytes() == b.values.tobytes()
    from fedpsi.federation import predict

    assert np.mean(predict(a, data.features) == data.labels) == 1.0
