import numpy as np
import pytest

from fedshapley.datasets import Dataset, make_synthetic, train_validation_split
from fedshapley.errors import ConfigurationError, ContractError
from fedshapley.models import LocalTrainConfig, ModelKind, ModelSpec
from fedshapley.simulation import (ClientConfig, Scenario, fedavg_aggregate,
                                   partition_noniid, poison_labels, run_simulation,
                                   select_clients, training_data_for)

SPEC = ModelSpec(kind=ModelKind.LOGISTIC, input_dim=2, num_classes=2)


def small_scenario(m=4, T=6, fraction=0.5, seed=11, dishonest=None):
    data = make_synthetic(2, 40 * m + 80, 2, 5.0, seed=seed)
    train, val = train_validation_split(data, 0.2, seed=seed)
    parts = partition_noniid(train, m, beta=5.0, seed=seed)
    clients = []
    dishonest = dishonest or {}
    for i in range(m):
        if i in dishonest:
            window, flip = dishonest[i]
            clients.append(ClientConfig(client_id=i, data=parts[i], dishonest=True,
                                        poison_window=window, flip_probability=flip))
        else:
            clients.append(ClientConfig(client_id=i, data=parts[i]))
    cfg = LocalTrainConfig(local_epochs=2, batch_size=16, learning_rate=0.3)
    return Scenario(clients=clients, model_spec=SPEC, num_epochs=T, fraction=fraction,
                    train=cfg, validation=val, seed=seed)


class TestPartition:
    def test_single_client_gets_everything(self):
        data = make_synthetic(2, 60, 2, 3.0, seed=0)
        parts = partition_noniid(data, 1, beta=0.5, seed=0)
        assert len(parts) == 1
        assert parts[0].num_rows == 60

    @pytest.mark.parametrize("m,beta,seed", [(3, 0.3, 0), (5, 1.0, 1), (4, 50.0, 2)])
    def test_disjoint_and_exhaustive(self, m, beta, seed):
        data = make_synthetic(2, 97, 2, 3.0, seed=seed)
        parts = partition_noniid(data, m, beta=beta, seed=seed)
        assert sum(p.num_rows for p in parts) == 97
        assert all(p.num_rows >= 1 for p in parts)
        # disjointness: every original row is used exactly once
        rows = np.vstack([p.features for p in parts])
        assert rows.shape == data.features.shape
        key = np.lexsort(rows.T)
        orig_key = np.lexsort(data.features.T)
        assert np.allclose(rows[key], data.features[orig_key])

    def test_large_beta_is_almost_uniform(self):
        # Dirichlet(1e6) concentrates at the uniform split: each of 2 clients
        # should hold about half of each class, across seeds.
        for seed in range(20):
            data = make_synthetic(2, 400, 2, 3.0, seed=seed)
            parts = partition_noniid(data, 2, beta=1e6, seed=seed)
            for part in parts:
                for cls in (0, 1):
                    share = (part.labels == cls).sum() / 200.0
                    assert abs(share - 0.5) <= 0.05

    def test_low_beta_is_skewed(self):
        data = make_synthetic(2, 400, 2, 3.0, seed=1)
        shares = []
        for seed in range(10):
            parts = partition_noniid(data, 2, beta=0.1, seed=seed)
            share = (parts[0].labels == 0).sum() / (data.labels == 0).sum()
            shares.append(share)
        assert np.std(shares) > 0.15  # strongly non-uniform class splits

    def test_more_clients_than_rows_rejected(self):
        data = make_synthetic(2, 4, 2, 3.0, seed=0)
        with pytest.raises(ConfigurationError):
            partition_noniid(data, 5, beta=1.0, seed=0)


class TestSelectClients:
    def test_full_fraction_selects_everyone(self):
        assert select_clients(5, 1.0, epoch=3, seed=0) == (0, 1, 2, 3, 4)

    def test_half_fraction_size_and_frequency(self):
        hits = np.zeros(4)
        for epoch in range(1, 1001):
            chosen = select_clients(4, 0.5, epoch, seed=42)
            assert len(chosen) == 2
            for c in chosen:
                hits[c] += 1
        freq = hits / 1000.0
        assert np.all(np.abs(freq - 0.5) <= 0.05)

    def test_deterministic(self):
        assert select_clients(6, 0.5, 7, 9) == select_clients(6, 0.5, 7, 9)

    def test_at_least_one(self):
        assert len(select_clients(10, 0.01, 1, 0)) == 1

    def test_invalid_fraction(self):
        with pytest.raises(ConfigurationError):
            select_clients(4, 0.0, 1, 0)


class TestPoisonLabels:
    def test_zero_probability_keeps_labels(self):
        data = make_synthetic(2, 50, 2, 3.0, seed=0)
        poisoned = poison_labels(data, 0.0, seed=1)
        assert np.array_equal(poisoned.labels, data.labels)

    def test_full_flip_inverts_binary(self):
        data = make_synthetic(2, 50, 2, 3.0, seed=0)
        poisoned = poison_labels(data, 1.0, seed=1)
        assert np.array_equal(poisoned.labels, 1 - data.labels)

    def test_half_probability_concentration(self):
        data = make_synthetic(2, 10000, 2, 3.0, seed=0)
        poisoned = poison_labels(data, 0.5, seed=2)
        flipped = (poisoned.labels != data.labels).mean()
        assert abs(flipped - 0.5) <= 0.02

    def test_original_untouched(self):
        data = make_synthetic(2, 50, 2, 3.0, seed=0)
        before = data.labels.copy()
        poison_labels(data, 1.0, seed=1)
        assert np.array_equal(data.labels, before)

    def test_multiclass_flips_to_other_class(self):
        data = make_synthetic(3, 300, 3, 3.0, seed=0)
        poisoned = poison_labels(data, 1.0, seed=3)
        assert np.all(poisoned.labels != data.labels)
        assert set(np.unique(poisoned.labels)) <= {0, 1, 2}


class TestFedAvg:
    def test_single_participant(self):
        base = np.array([1.0, 2.0])
        out = fedavg_aggregate(base, {0: np.array([0.5, -0.5])}, {0: 10})
        assert np.array_equal(out, [1.5, 1.5])

    def test_equal_sizes_cancel(self):
        base = np.array([1.0, 2.0])
        delta = np.array([3.0, -1.0])
        out = fedavg_aggregate(base, {0: delta, 2: -delta}, {0: 7, 2: 7})
        assert np.allclose(out, base, atol=1e-15)

    def test_weighted_example(self):
        base = np.zeros(2)
        out = fedavg_aggregate(base, {0: np.array([4.0, 0.0]), 1: np.array([0.0, 4.0])},
                               {0: 1, 1: 3})
        assert np.allclose(out, [1.0, 3.0], atol=1e-15)

    def test_empty_participants_rejected(self):
        with pytest.raises(ContractError):
            fedavg_aggregate(np.zeros(2), {}, {})

    def test_nonpositive_size_rejected(self):
        with pytest.raises(ContractError):
            fedavg_aggregate(np.zeros(2), {0: np.ones(2)}, {0: 0})

    def test_weights_sum_to_one(self):
        sizes = {0: 3, 1: 11, 2: 29}
        total = sum(sizes.values())
        weights = [sizes[i] / total for i in sizes]
        assert abs(sum(weights) - 1.0) <= 1e-12


class TestRunSimulation:
    def test_single_epoch_composition(self):
        scenario = small_scenario(m=1, T=1, fraction=1.0)
        log = run_simulation(scenario)
        assert log.num_epochs == 1
        rec = log.epochs[0]
        assert rec.participants == (0,)
        expected = rec.global_before + rec.gradients[0]
        assert np.array_equal(rec.global_after, expected)
        assert np.array_equal(rec.global_before, log.initial_model)

    def test_chain_invariant(self):
        log = run_simulation(small_scenario(m=4, T=12))
        log.check_chain()
        for prev, cur in zip(log.epochs, log.epochs[1:]):
            assert np.array_equal(cur.global_before, prev.global_after)

    def test_replay_is_bit_identical(self):
        log_a = run_simulation(small_scenario(m=3, T=5, seed=21))
        log_b = run_simulation(small_scenario(m=3, T=5, seed=21))
        assert np.array_equal(log_a.initial_model, log_b.initial_model)
        for ra, rb in zip(log_a.epochs, log_b.epochs):
            assert ra.participants == rb.participants
            assert np.array_equal(ra.global_after, rb.global_after)
            for cid in ra.participants:
                assert np.array_equal(ra.gradients[cid], rb.gradients[cid])

    def test_poison_window_is_honored(self):
        scenario = small_scenario(m=2, T=8, dishonest={0: ((3, 7), 1.0)})
        client = scenario.clients[0]
        for epoch in range(1, 9):
            data = training_data_for(client, epoch, scenario.seed)
            if 3 <= epoch <= 7:
                assert np.array_equal(data.labels, 1 - client.data.labels)
            else:
                assert data is client.data

    def test_poison_redrawn_per_epoch(self):
        scenario = small_scenario(m=2, T=8, dishonest={0: ((3, 7), 0.5)})
        client = scenario.clients[0]
        labels_3 = training_data_for(client, 3, scenario.seed).labels
        labels_4 = training_data_for(client, 4, scenario.seed).labels
        assert not np.array_equal(labels_3, labels_4)

    def test_validation_never_poisoned(self):
        scenario = small_scenario(m=2, T=8, dishonest={0: ((1, 8), 1.0)})
        before = scenario.validation.labels.copy()
        run_simulation(scenario)
        assert np.array_equal(scenario.validation.labels, before)

    def test_fedavg_weights_per_epoch_sum_to_one(self):
        log = run_simulation(small_scenario(m=4, T=6))
        for rec in log.epochs:
            total = sum(rec.data_sizes[i] for i in rec.participants)
            weights = [rec.data_sizes[i] / total for i in rec.participants]
            assert abs(sum(weights) - 1.0) <= 1e-12

    def test_client_config_validation(self):
        data = make_synthetic(2, 20, 2, 3.0, seed=0)
        with pytest.raises(ConfigurationError):
            ClientConfig(client_id=0, data=data, dishonest=True)
        with pytest.raises(ConfigurationError):
            ClientConfig(client_id=0, data=data, poison_window=(1, 3))
        with pytest.raises(ConfigurationError):
            ClientConfig(client_id=0, data=data, dishonest=True, poison_window=(4, 2))
