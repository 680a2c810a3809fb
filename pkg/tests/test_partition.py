"""Shard construction: skew patterns, conservation, determinism."""

import numpy as np
import pytest

from geofed.datastore import SyntheticSpec, synth_generate
from geofed.errors import ConfigError, DataValidationError
from geofed.partition import (
    ClientShard,
    PartitionSpec,
    dirichlet_label_partition,
    domain_partition,
    lds_coefficients,
    lds_partition,
    load_partition,
    save_partition,
    shard_class_counts,
)
from geofed.rng import substream


def single_domain_dataset(classes=10, per_class=100, seed=0):
    return synth_generate(
        SyntheticSpec(
            dim=4, classes=classes, domains=1,
            train_per_class=per_class, test_per_class=5, seed=seed,
        )
    )


def multi_domain_dataset(domains=3, classes=4, per_class=60, seed=0):
    return synth_generate(
        SyntheticSpec(
            dim=4, classes=classes, domains=domains,
            train_per_class=per_class, test_per_class=5, seed=seed,
        )
    )


class TestDirichletLabel:
    def test_k1_gets_everything(self):
        ds = single_domain_dataset(classes=3, per_class=20)
        spec = PartitionSpec("dirichlet_label", num_clients=1, beta=0.5, seed=1)
        shards = dirichlet_label_partition(ds, spec)
        assert len(shards) == 1
        np.testing.assert_array_equal(shards[0].indices, np.arange(60))

    def test_disjoint_and_exact_coverage(self):
        ds = single_domain_dataset()
        spec = PartitionSpec("dirichlet_label", num_clients=7, beta=0.3, seed=2)
        shards = dirichlet_label_partition(ds, spec)
        merged = np.concatenate([s.indices for s in shards])
        assert merged.size == ds.domains[0].train.n
        assert np.unique(merged).size == merged.size

    def test_per_class_conservation(self):
        ds = single_domain_dataset(classes=5, per_class=83)
        spec = PartitionSpec("dirichlet_label", num_clients=4, beta=0.2, seed=3)
        shards = dirichlet_label_partition(ds, spec)
        labels = ds.domains[0].train.labels
        for c in range(5):
            assigned = sum(int((labels[s.indices] == c).sum()) for s in shards)
            assert assigned == 83

    def test_high_beta_approaches_uniform(self):
        # Oracle: simulate the Dirichlet concentration directly. At
        # beta = 1e6 and n = 1000 per class, per-client deviations from
        # 100 stay below 5% with overwhelming probability.
        oracle = substream(999, "dirichlet-oracle")
        draws = oracle.dirichlet(np.full(10, 1e6), size=2000) * 1000
        q99 = np.quantile(np.abs(draws - 100).max(axis=1), 0.99)
        assert q99 < 5.0

        ds = single_domain_dataset(classes=10, per_class=1000)
        for seed in range(5):
            spec = PartitionSpec("dirichlet_label", num_clients=10, beta=1e6, seed=seed)
            shards = dirichlet_label_partition(ds, spec)
            _, counts = shard_class_counts(shards, ds)
            assert np.abs(counts - 100).max() <= 5

    def test_low_beta_is_skewed(self):
        ds = single_domain_dataset(classes=10, per_class=100)
        spec = PartitionSpec("dirichlet_label", num_clients=10, beta=0.05, seed=4)
        shards = dirichlet_label_partition(ds, spec)
        _, counts = shard_class_counts(shards, ds)
        # severe skew: most (client, class) cells are empty
        assert (counts == 0).mean() > 0.5

    def test_deterministic_and_seed_sensitive(self):
        ds = single_domain_dataset(classes=3, per_class=30)
        spec = PartitionSpec("dirichlet_label", num_clients=3, beta=0.5, seed=5)
        a = dirichlet_label_partition(ds, spec)
        b = dirichlet_label_partition(ds, spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.indices, y.indices)
        other = dirichlet_label_partition(
            ds, PartitionSpec("dirichlet_label", num_clients=3, beta=0.5, seed=6)
        )
        assert any(
            not np.array_equal(x.indices, y.indices) for x, y in zip(a, other)
        )

    def test_multi_domain_rejected(self):
        ds = multi_domain_dataset()
        with pytest.raises(DataValidationError, match="one domain"):
            dirichlet_label_partition(
                ds, PartitionSpec("dirichlet_label", num_clients=2, seed=0)
            )


class TestDomainPerClient:
    def test_fraction_one_keeps_domain(self):
        ds = multi_domain_dataset(domains=2, classes=3, per_class=20)
        spec = PartitionSpec(
            "domain_per_client", num_clients=2, fraction_per_domain=1.0, seed=1
        )
        shards = domain_partition(ds, spec)
        for shard in shards:
            np.testing.assert_array_equal(shard.indices, np.arange(60))

    def test_ten_percent_of_ten_thousand(self):
        ds = synth_generate(
            SyntheticSpec(dim=2, classes=10, domains=1,
                          train_per_class=1000, test_per_class=1, seed=2)
        )
        spec = PartitionSpec(
            "domain_per_client", num_clients=1, fraction_per_domain=0.1, seed=3
        )
        (shard,) = domain_partition(ds, spec)
        assert shard.size == 1000

    def test_seeds_change_members_not_size(self):
        ds = multi_domain_dataset(domains=2, classes=2, per_class=50)
        shards_a = domain_partition(
            ds, PartitionSpec("domain_per_client", 2, fraction_per_domain=0.5, seed=1)
        )
        shards_b = domain_partition(
            ds, PartitionSpec("domain_per_client", 2, fraction_per_domain=0.5, seed=2)
        )
        for a, b in zip(shards_a, shards_b):
            assert a.size == b.size == 50
            assert not np.array_equal(a.indices, b.indices)

    def test_domain_count_mismatch(self):
        ds = multi_domain_dataset(domains=3)
        with pytest.raises(DataValidationError, match="num_clients"):
            domain_partition(ds, PartitionSpec("domain_per_client", num_clients=2))


class TestLds:
    def test_columns_sum_to_one(self):
        spec = PartitionSpec("lds", num_clients=4, beta=0.1, seed=7)
        coef = lds_coefficients(spec, 65)
        np.testing.assert_allclose(coef.sum(axis=0), np.ones(65), atol=1e-12)

    def test_high_beta_splits_evenly(self):
        ds = multi_domain_dataset(domains=4, classes=4, per_class=100)
        spec = PartitionSpec("lds", num_clients=4, beta=1e6, seed=8)
        shards = lds_partition(ds, spec)
        _, counts = shard_class_counts(shards, ds)
        assert np.abs(counts - 25).max() <= 2

    def test_low_beta_coefficients_are_skewed(self):
        # Oracle on the raw Dirichlet draws: with beta = 0.1 over 4
        # clients, the max/min coefficient ratio per column should exceed
        # 10 for at least half the columns.
        hits = []
        for seed in range(6):
            coef = lds_coefficients(PartitionSpec("lds", 4, beta=0.1, seed=seed), 40)
            ratio = coef.max(axis=0) / np.maximum(coef.min(axis=0), 1e-300)
            hits.append((ratio > 10).mean())
        assert np.median(hits) >= 0.5

    def test_clients_keep_only_own_domain(self):
        ds = multi_domain_dataset(domains=3, classes=3, per_class=40)
        spec = PartitionSpec("lds", num_clients=3, beta=0.5, seed=9)
        shards = lds_partition(ds, spec)
        domains = sorted(d.domain for d in ds.domains)
        for shard, domain in zip(shards, domains):
            assert shard.domain == domain
            assert shard.indices.size <= 120
            assert (shard.indices < 120).all()

    def test_class_set_mismatch_rejected(self):
        ds = multi_domain_dataset(domains=2, classes=3, per_class=10)
        # drop one class from the second domain
        from geofed.datastore import DomainSplit, EmbeddingDataset, LabeledEmbeddings

        d0, d1 = ds.domains
        keep = d1.train.labels != 2
        pruned = DomainSplit(
            d1.domain,
            LabeledEmbeddings(d1.train.data[keep], d1.train.labels[keep]),
            d1.test,
        )
        broken = EmbeddingDataset(ds.name, ds.dim, ds.classes, (d0, pruned))
        with pytest.raises(DataValidationError, match="class set"):
            lds_partition(broken, PartitionSpec("lds", num_clients=2, seed=0))


class TestShardPlumbing:
    def test_duplicate_indices_rejected(self):
        with pytest.raises(DataValidationError, match="duplicate"):
            ClientShard(0, "d", np.array([1, 1, 2]))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            PartitionSpec("bogus", num_clients=1)
        with pytest.raises(ConfigError):
            PartitionSpec("lds", num_clients=0)
        with pytest.raises(ConfigError):
            PartitionSpec("lds", num_clients=2, beta=0.0)
        with pytest.raises(ConfigError):
            PartitionSpec("domain_per_client", num_clients=2, fraction_per_domain=0.0)

    def test_save_load_round_trip(self, tmp_path):
        ds = single_domain_dataset(classes=3, per_class=20)
        spec = PartitionSpec("dirichlet_label", num_clients=3, beta=0.4, seed=11)
        shards = dirichlet_label_partition(ds, spec)
        path = tmp_path / "partition.json"
        save_partition(shards, spec, path)
        loaded, meta = load_partition(path)
        assert meta == {"mode": "dirichlet_label", "seed": 11, "beta": 0.4}
        for a, b in zip(shards, loaded):
            assert a.client_id == b.client_id and a.domain == b.domain
            np.testing.assert_array_equal(a.indices, b.indices)

    def test_class_counts_match_labels(self):
        ds = single_domain_dataset(classes=4, per_class=30)
        spec = PartitionSpec("dirichlet_label", num_clients=2, beta=1.0, seed=12)
        shards = dirichlet_label_partition(ds, spec)
        classes, counts = shard_class_counts(shards, ds)
        assert classes == [0, 1, 2, 3]
        assert counts.sum() == 120
