"""Protocol orchestration: geometry prep, local training, FedAvg, full runs."""

import numpy as np
import pytest

from geofed.augment import AugmentationPlan
from geofed.datastore import SyntheticSpec, synth_generate
from geofed.errors import ConfigError, DataValidationError
from geofed.federation import (
    ExperimentConfig,
    fedavg_aggregate,
    prepare_geometry,
    run_federation,
    run_local_training,
)
from geofed.geometry import EmbeddingMatrix, aggregate_global_stats, build_shape, compute_class_stats
from geofed.model import LinearClassifierParams, SgdConfig, evaluate_loss, loss_and_grad, sgd_step
from geofed.partition import PartitionSpec, build_partition
from geofed.rng import substream


def single_domain_config(**overrides):
    base = dict(
        partition=PartitionSpec("dirichlet_label", num_clients=4, beta=0.2, seed=21),
        augmentation=AugmentationPlan("single_domain", target_per_class=60),
        sgd=SgdConfig(learning_rate=0.05, batch_size=32),
        rounds=4,
        local_rounds=3,
        seed=21,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def multi_domain_config(**overrides):
    base = dict(
        partition=PartitionSpec("lds", num_clients=3, beta=0.3, seed=22),
        augmentation=AugmentationPlan("multi_domain", step1_target=40, step2_per_prototype=20),
        sgd=SgdConfig(learning_rate=0.05, batch_size=32),
        rounds=3,
        local_rounds=3,
        seed=22,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_dataset():
    return synth_generate(
        SyntheticSpec(dim=8, classes=3, domains=1,
                      train_per_class=90, test_per_class=30, seed=31)
    )


@pytest.fixture(scope="module")
def multi_dataset():
    return synth_generate(
        SyntheticSpec(dim=8, classes=3, domains=3, train_per_class=50,
                      test_per_class=20, domain_shift=2.0, seed=32)
    )


def random_params(rng, c=3, p=4):
    return LinearClassifierParams(rng.standard_normal((c, p)), rng.standard_normal(c))


class TestPrepareGeometry:
    def test_single_client_shapes_match_local(self, small_dataset):
        config = single_domain_config(
            partition=PartitionSpec("dirichlet_label", num_clients=1, beta=1.0, seed=21)
        )
        shards = build_partition(small_dataset, config.partition)
        bundle = prepare_geometry(shards, small_dataset, config)
        split = small_dataset.domains[0].train
        for c in range(3):
            local = compute_class_stats(
                EmbeddingMatrix(split.data[split.labels == c], c)
            )
            expected = build_shape(aggregate_global_stats([local]))
            np.testing.assert_allclose(
                bundle.shapes[c].eigenvalues, expected.eigenvalues, atol=1e-10
            )

    def test_shapes_equal_pooled_oracle(self, small_dataset):
        config = single_domain_config()
        shards = build_partition(small_dataset, config.partition)
        bundle = prepare_geometry(shards, small_dataset, config)
        split = small_dataset.domains[0].train
        for c in range(3):
            pooled = compute_class_stats(
                EmbeddingMatrix(split.data[split.labels == c].astype(np.float64), c)
            )
            expected = build_shape(aggregate_global_stats([pooled]))
            np.testing.assert_allclose(
                bundle.shapes[c].eigenvalues, expected.eigenvalues, atol=1e-8
            )
            align = np.abs(
                np.einsum(
                    "ij,ij->j", bundle.shapes[c].eigenvectors, expected.eigenvectors
                )
            )
            np.testing.assert_allclose(align, np.ones(8), atol=1e-6)

    def test_prototype_count_per_class(self, multi_dataset):
        config = multi_domain_config()
        shards = build_partition(multi_dataset, config.partition)
        bundle = prepare_geometry(shards, multi_dataset, config)
        for c in range(3):
            holders = sum(
                1
                for shard in shards
                if (multi_dataset.domain(shard.domain).train.labels[shard.indices] == c).any()
            )
            protos = [p for p in bundle.prototypes if p.class_id == c]
            assert len(protos) == holders


class TestLocalTraining:
    def test_zero_rounds_returns_global_params(self, small_dataset):
        split = small_dataset.domains[0].train
        params = random_params(np.random.default_rng(0), c=3, p=8)
        update = run_local_training(
            split.data, split.labels, params,
            SgdConfig(learning_rate=0.1), 0, substream(0, "t"),
        )
        np.testing.assert_array_equal(update.params.weights, params.weights)
        assert update.weight == split.n

    def test_zero_learning_rate_is_identity(self, small_dataset):
        split = small_dataset.domains[0].train
        params = random_params(np.random.default_rng(1), c=3, p=8)
        update = run_local_training(
            split.data, split.labels, params,
            SgdConfig(learning_rate=0.0), 3, substream(0, "t"),
        )
        np.testing.assert_array_equal(update.params.weights, params.weights)
        np.testing.assert_array_equal(update.params.bias, params.bias)

    def test_loss_improves_on_separable_shard(self):
        rng = np.random.default_rng(2)
        x = np.concatenate([rng.standard_normal((30, 4)) + 3, rng.standard_normal((30, 4)) - 3])
        y = np.array([0] * 30 + [1] * 30)
        params = LinearClassifierParams.zeros(2, 4)
        update = run_local_training(
            x, y, params, SgdConfig(learning_rate=0.05, batch_size=16), 10, substream(3, "t")
        )
        assert evaluate_loss(update.params, x, y) < evaluate_loss(params, x, y)

    def test_empty_client_rejected(self):
        params = LinearClassifierParams.zeros(2, 4)
        with pytest.raises(DataValidationError, match="no training samples"):
            run_local_training(
                np.empty((0, 4)), np.empty(0, dtype=int), params,
                SgdConfig(learning_rate=0.1), 1, substream(0, "t"),
            )


class TestFedAvg:
    def test_idempotent_on_identical_params(self):
        params = random_params(np.random.default_rng(3))
        merged = fedavg_aggregate([(params, 5.0), (params, 1.0), (params, 2.5)])
        np.testing.assert_array_equal(merged.weights, params.weights)
        np.testing.assert_array_equal(merged.bias, params.bias)

    def test_equal_weights_arithmetic_mean(self):
        rng = np.random.default_rng(4)
        a, b = random_params(rng), random_params(rng)
        merged = fedavg_aggregate([(a, 1.0), (b, 1.0)])
        np.testing.assert_allclose(
            merged.weights, (a.weights + b.weights) / 2, atol=1e-15
        )

    def test_matches_brute_force_weighted_sum(self):
        rng = np.random.default_rng(5)
        updates = [(random_params(rng), float(w)) for w in (3, 1, 7, 2)]
        total = sum(w for _, w in updates)
        expected_w = sum(w * p.weights for p, w in updates) / total
        expected_b = sum(w * p.bias for p, w in updates) / total
        merged = fedavg_aggregate(updates)
        assert np.abs(merged.weights - expected_w).max() <= 1e-12
        assert np.abs(merged.bias - expected_b).max() <= 1e-12

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(6)
        updates = [(random_params(rng), float(w)) for w in (3, 1, 7, 2, 11)]
        fwd = fedavg_aggregate(updates)
        rev = fedavg_aggregate(updates[::-1])
        np.testing.assert_array_equal(fwd.weights, rev.weights)
        np.testing.assert_array_equal(fwd.bias, rev.bias)

    def test_power_of_two_scaling_exact(self):
        rng = np.random.default_rng(7)
        updates = [(random_params(rng), float(w)) for w in (2, 5)]
        scaled = [
            (LinearClassifierParams(2.0 * p.weights, 2.0 * p.bias), w)
            for p, w in updates
        ]
        np.testing.assert_array_equal(
            fedavg_aggregate(scaled).weights, 2.0 * fedavg_aggregate(updates).weights
        )

    def test_empty_and_zero_weight_rejected(self):
        with pytest.raises(DataValidationError):
            fedavg_aggregate([])
        params = random_params(np.random.default_rng(8))
        with pytest.raises(DataValidationError):
            fedavg_aggregate([(params, 0.0)])


class TestRunFederation:
    def test_same_seed_identical_records(self, small_dataset):
        config = single_domain_config()
        a = run_federation(config, small_dataset)
        b = run_federation(config, small_dataset)
        for ra, rb in zip(a.records, b.records):
            assert ra == rb
        np.testing.assert_array_equal(a.final_params.weights, b.final_params.weights)

    def test_worker_count_does_not_change_results(self, small_dataset):
        config = single_domain_config()
        a = run_federation(config, small_dataset, workers=1)
        b = run_federation(config, small_dataset, workers=4)
        assert a.records == b.records
        np.testing.assert_array_equal(a.final_params.weights, b.final_params.weights)

    def test_baseline_skips_geometry(self, small_dataset):
        config = single_domain_config(ggeur_enabled=False)
        result = run_federation(config, small_dataset)
        assert len(result.records) == config.rounds
        assert all(0 <= acc <= 1 for r in result.records for acc in r.per_domain_accuracy.values())

    def test_single_client_baseline_equals_centralized_sgd(self, small_dataset):
        config = single_domain_config(
            partition=PartitionSpec("dirichlet_label", num_clients=1, beta=1.0, seed=21),
            ggeur_enabled=False,
            rounds=2,
        )
        result = run_federation(config, small_dataset)

        # Re-run the same schedule as plain centralized SGD.
        split = small_dataset.domains[0].train
        params = LinearClassifierParams.zeros(3, 8)
        for round_index in (1, 2):
            rng = substream(config.seed, "train", round_index, 0)
            local = params
            velocity = LinearClassifierParams.zeros(3, 8)
            for _ in range(config.local_rounds):
                order = rng.permutation(split.n)
                for start in range(0, split.n, config.sgd.batch_size):
                    idx = order[start : start + config.sgd.batch_size]
                    _, grads = loss_and_grad(
                        local, split.data[idx], split.labels[idx], config.sgd.weight_decay
                    )
                    local, velocity = sgd_step(local, velocity, grads, config.sgd)
            params = local  # single client, weight 1: aggregation is identity
        np.testing.assert_array_equal(result.final_params.weights, params.weights)

    def test_step2_toggle_changes_multi_domain_runs(self, multi_dataset):
        on = run_federation(multi_domain_config(step2_enabled=True), multi_dataset)
        off = run_federation(multi_domain_config(step2_enabled=False), multi_dataset)
        assert not np.array_equal(on.final_params.weights, off.final_params.weights)

    def test_step2_toggle_is_noop_in_single_domain(self, small_dataset):
        on = run_federation(single_domain_config(step2_enabled=True), small_dataset)
        off = run_federation(single_domain_config(step2_enabled=False), small_dataset)
        np.testing.assert_array_equal(on.final_params.weights, off.final_params.weights)
        assert on.records == off.records

    def test_round_records_have_all_domains(self, multi_dataset):
        result = run_federation(multi_domain_config(), multi_dataset)
        domains = {d.domain for d in multi_dataset.domains}
        for record in result.records:
            assert set(record.per_domain_accuracy) == domains
            assert set(record.per_domain_loss) == domains
            assert set(record.per_client_accuracy) == {0, 1, 2}


class TestConfigValidation:
    def test_mode_consistency_enforced(self):
        with pytest.raises(ConfigError, match="augmentation mode"):
            ExperimentConfig(
                partition=PartitionSpec("dirichlet_label", num_clients=2, seed=0),
                augmentation=AugmentationPlan("multi_domain"),
                sgd=SgdConfig(learning_rate=0.1),
                rounds=1,
            )

    def test_bad_rounds(self):
        with pytest.raises(ConfigError):
            single_domain_config(rounds=0)
        with pytest.raises(ConfigError):
            single_domain_config(local_rounds=0)

    def test_unknown_aggregator(self):
        with pytest.raises(ConfigError, match="aggregator"):
            single_domain_config(aggregator="scaffold")

    def test_from_dict_round_trip(self):
        payload = {
            "seed": 9,
            "rounds": 3,
            "partition": {"mode": "dirichlet_label", "num_clients": 2, "beta": 0.5},
            "augmentation": {"mode": "single_domain", "target_per_class": 10},
            "sgd": {"learning_rate": 0.1, "batch_size": 8},
        }
        config = ExperimentConfig.from_dict(payload)
        assert config.seed == 9 and config.partition.seed == 9
        assert config.echo()["augmentation"]["target_per_class"] == 10

    def test_from_dict_missing_field(self):
        with pytest.raises(ConfigError, match="missing"):
            ExperimentConfig.from_dict({"rounds": 2})
