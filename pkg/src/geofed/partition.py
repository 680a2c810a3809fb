"""Client shard construction: label skew, domain skew, and both at once.

All three modes are pure functions of (dataset, spec): every random draw
comes from a named substream of the spec seed, so a spec reproduces its
shards exactly. Shard indices always refer to the train split of the
shard's own domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataValidationError
from .rng import substream

DIRICHLET_LABEL = "dirichlet_label"
DOMAIN_PER_CLIENT = "domain_per_client"
LDS = "lds"
_MODES = (DIRICHLET_LABEL, DOMAIN_PER_CLIENT, LDS)


@dataclass(frozen=True)
class ClientShard:
    """A client's identity: its domain plus indices into that domain's train split."""

    client_id: int
    domain: str
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise DataValidationError("shard indices must be a flat index list")
        if idx.size and np.unique(idx).size != idx.size:
            raise DataValidationError(f"duplicate indices in shard {self.client_id}")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    beta is the Dirichlet concentration (smaller = more skew) used by the
    dirichlet_label and lds modes; fraction_per_domain is the subsample
    fraction used by domain_per_client.
    """

    mode: str
    num_clients: int
    beta: float = 0.5
    fraction_per_domain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"unknown partition mode {self.mode!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not self.beta > 0:
            raise ConfigError("beta must be > 0")
        if not 0 < self.fraction_per_domain <= 1:
            raise ConfigError("fraction_per_domain must be in (0, 1]")


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to ``total``, closest to the proportions.

    Floor first, then hand the remainder to the largest fractional parts
    (ties to the lowest client index).
    """
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def dirichlet_label_partition(dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Label-skew shards of a single-domain dataset.

    For every class, proportions over the K clients are drawn from
    Dir(beta) and the class's (shuffled) indices are assigned by
    largest-remainder rounding, so each sample lands on exactly one
    client. Clients may receive 0 samples of a class.
    """
    if spec.mode != DIRICHLET_LABEL:
        raise ConfigError(f"spec mode must be {DIRICHLET_LABEL!r}")
    if len(dataset.domains) != 1:
        raise DataValidationError(
            f"label-skew partitioning expects one domain, got {len(dataset.domains)}"
        )
    split = dataset.domains[0]
    labels = split.train.labels
    k = spec.num_clients
    rng = substream(spec.seed, "partition", DIRICHLET_LABEL)

    per_client: list[list[np.ndarray]] = [[] for _ in range(k)]
    for class_id in np.unique(labels):
        class_indices = np.nonzero(labels == class_id)[0]
        proportions = rng.dirichlet(np.full(k, spec.beta))
        counts = _largest_remainder_counts(proportions, class_indices.size)
        shuffled = rng.permutation(class_indices)
        stops = np.cumsum(counts)
        start = 0
        for client, stop in enumerate(stops):
            per_client[client].append(shuffled[start:stop])
            start = stop
    return [
        ClientShard(c, split.domain, np.sort(np.concatenate(chunks)) if chunks else np.empty(0, np.int64))
        for c, chunks in enumerate(per_client)
    ]


def domain_partition(dataset, spec: PartitionSpec) -> list[ClientShard]:
    """One client per domain, each holding a uniform random subsample.

    Client k receives round(fraction * n) indices of the k-th domain
    (domains in sorted name order).
    """
    if spec.mode != DOMAIN_PER_CLIENT:
        raise ConfigError(f"spec mode must be {DOMAIN_PER_CLIENT!r}")
    domains = sorted(dataset.domains, key=lambda d: d.domain)
    if len(domains) != spec.num_clients:
        raise DataValidationError(
            f"domain count {len(domains)} != num_clients {spec.num_clients}"
        )
    shards = []
    for client, split in enumerate(domains):
        n = split.train.labels.size
        keep = _round_half_up(spec.fraction_per_domain * n)
        rng = substream(spec.seed, "partition", DOMAIN_PER_CLIENT, split.domain)
        chosen = np.sort(rng.permutation(n)[:keep])
        shards.append(ClientShard(client, split.domain, chosen))
    return shards


def lds_coefficients(spec: PartitionSpec, num_classes: int) -> np.ndarray:
    """The (K, C) Dirichlet coefficient matrix; every column sums to 1."""
    rng = substream(spec.seed, "partition", LDS)
    matrix = np.empty((spec.num_clients, num_classes))
    for class_id in range(num_classes):
        matrix[:, class_id] = rng.dirichlet(np.full(spec.num_clients, spec.beta))
    return matrix


def lds_partition(dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Coexisting label and domain skew: one domain per client, Dirichlet counts.

    A (K, C) coefficient matrix with Dir(beta) columns decides what share
    of its own domain's class-c pool each client keeps,
    round(coef * pool size) samples chosen uniformly; the rest of the
    pool is dropped (clients never receive another domain's raw data).
    """
    if spec.mode != LDS:
        raise ConfigError(f"spec mode must be {LDS!r}")
    domains = sorted(dataset.domains, key=lambda d: d.domain)
    if len(domains) != spec.num_clients:
        raise DataValidationError(
            f"domain count {len(domains)} != num_clients {spec.num_clients}"
        )
    class_sets = [frozenset(np.unique(d.train.labels).tolist()) for d in domains]
    if len(set(class_sets)) != 1:
        raise DataValidationError("all domains must share the same class set")
    classes = sorted(class_sets[0])

    coef = lds_coefficients(spec, len(classes))
    shards = []
    for client, split in enumerate(domains):
        labels = split.train.labels
        kept: list[np.ndarray] = []
        for col, class_id in enumerate(classes):
            pool = np.nonzero(labels == class_id)[0]
            keep = min(_round_half_up(coef[client, col] * pool.size), pool.size)
            rng = substream(spec.seed, "partition", LDS, split.domain, class_id)
            kept.append(np.sort(rng.permutation(pool)[:keep]))
        indices = np.sort(np.concatenate(kept)) if kept else np.empty(0, np.int64)
        shards.append(ClientShard(client, split.domain, indices))
    return shards


def build_partition(dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Dispatch on spec.mode."""
    if spec.mode == DIRICHLET_LABEL:
        return dirichlet_label_partition(dataset, spec)
    if spec.mode == DOMAIN_PER_CLIENT:
        return domain_partition(dataset, spec)
    return lds_partition(dataset, spec)


def save_partition(shards: list[ClientShard], spec: PartitionSpec, path) -> None:
    """Persist shards as the JSON partition file."""
    payload = {
        "mode": spec.mode,
        "seed": spec.seed,
        "beta": spec.beta,
        "clients": [
            {
                "client_id": s.client_id,
                "domain": s.domain,
                "indices": s.indices.tolist(),
            }
            for s in shards
        ],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_partition(path) -> tuple[list[ClientShard], dict]:
    """Read a partition file back; returns (shards, metadata)."""
    payload = json.loads(Path(path).read_text())
    shards = [
        ClientShard(c["client_id"], c["domain"], np.asarray(c["indices"], dtype=np.int64))
        for c in payload["clients"]
    ]
    meta = {k: payload[k] for k in ("mode", "seed", "beta")}
    return shards, meta


def shard_class_counts(shards: list[ClientShard], dataset) -> tuple[list[int], np.ndarray]:
    """Client-by-class sample counts, the heatmap behind skew inspection."""
    by_domain = {d.domain: d.train.labels for d in dataset.domains}
    classes = sorted({int(c) for labels in by_domain.values() for c in np.unique(labels)})
    col = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(shards), len(classes)), dtype=np.int64)
    for row, shard in enumerate(shards):
        labels = by_domain[shard.domain][shard.indices]
        for class_id, n in zip(*np.unique(labels, return_counts=True)):
            counts[row, col[int(class_id)]] = int(n)
    return classes, counts
