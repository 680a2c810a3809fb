"""End-to-end protocol orchestration.

One run is: build shards, compute per-class statistics on the original
samples, reconstruct each class's global covariance on the server, send
shapes (and, multi-domain, class prototypes) back, augment every client
once as a preprocessing step, then alternate local SGD epochs with
weighted parameter averaging for a fixed number of rounds, evaluating the
global model on every domain's full test split after each round.

Everything is a pure function of (config, dataset): per-client work draws
from private named streams and aggregation walks clients in fixed order,
so results are bit-identical for any worker count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import (
    SINGLE_DOMAIN,
    AugmentationPlan,
    Prototype,
    augment_multi_domain,
    augment_single_domain,
)
from .datastore import EmbeddingDataset
from .errors import ConfigError, DataValidationError
from .geometry import (
    EmbeddingMatrix,
    GeometricShape,
    aggregate_global_stats,
    build_shape,
    compute_class_stats,
)
from .model import (
    LinearClassifierParams,
    SgdConfig,
    evaluate_loss,
    evaluate_top1,
    loss_and_grad,
    sgd_step,
)
from .partition import (
    DIRICHLET_LABEL,
    ClientShard,
    PartitionSpec,
    build_partition,
)
from .rng import substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that identifies one experiment (execution knobs excluded)."""

    partition: PartitionSpec
    augmentation: AugmentationPlan
    sgd: SgdConfig
    rounds: int
    local_rounds: int = 10
    seed: int = 0
    aggregator: str = "fedavg"
    ggeur_enabled: bool = True
    step2_enabled: bool = True
    weight_by_augmented: bool = True
    dataset_manifest: str | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_rounds < 1:
            raise ConfigError("local_rounds must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        single = self.partition.mode == DIRICHLET_LABEL
        if single != (self.augmentation.mode == SINGLE_DOMAIN):
            raise ConfigError(
                f"partition mode {self.partition.mode!r} requires augmentation mode "
                f"{'single_domain' if single else 'multi_domain'!r}"
            )

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        try:
            seed = int(payload.get("seed", 0))
            partition = PartitionSpec(**{**payload["partition"], "seed": seed})
            augmentation = AugmentationPlan(**payload["augmentation"])
            sgd = SgdConfig(**payload["sgd"])
            return cls(
                partition=partition,
                augmentation=augmentation,
                sgd=sgd,
                rounds=int(payload["rounds"]),
                local_rounds=int(payload.get("local_rounds", 10)),
                seed=seed,
                aggregator=payload.get("aggregator", "fedavg"),
                ggeur_enabled=bool(payload.get("ggeur_enabled", True)),
                step2_enabled=bool(payload.get("step2_enabled", True)),
                weight_by_augmented=bool(payload.get("weight_by_augmented", True)),
                dataset_manifest=payload.get("dataset"),
            )
        except KeyError as exc:
            raise ConfigError(f"experiment config missing field {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    def echo(self) -> dict:
        """JSON-safe copy of the config for the run summary."""
        return asdict(self)


def load_experiment_config(path) -> ExperimentConfig:
    """Parse a config JSON file; the dataset path resolves relative to it."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    config = ExperimentConfig.from_dict(payload)
    if config.dataset_manifest is not None:
        resolved = (path.parent / config.dataset_manifest).resolve()
        config = ExperimentConfig(**{**config.__dict__, "dataset_manifest": str(resolved)})
    return config


@dataclass(frozen=True)
class GeometryBundle:
    """What the server broadcasts: per-class shapes plus all prototypes."""

    shapes: dict[int, GeometricShape] = field(repr=False)
    prototypes: tuple[Prototype, ...] = ()


@dataclass(frozen=True)
class ClientUpdate:
    params: LinearClassifierParams
    weight: float


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    per_domain_accuracy: dict[str, float]
    per_domain_loss: dict[str, float]
    per_client_accuracy: dict[int, float]
    snapshot: str | None = None


@dataclass(frozen=True)
class FederationResult:
    records: list[RoundRecord]
    final_params: LinearClassifierParams


def _client_arrays(shard: ClientShard, dataset: EmbeddingDataset):
    split = dataset.domain(shard.domain).train
    return split.data[shard.indices], split.labels[shard.indices]


def prepare_geometry(
    shards: Sequence[ClientShard],
    dataset: EmbeddingDataset,
    config: ExperimentConfig,
) -> GeometryBundle:
    """Client statistics upload and server-side shape reconstruction.

    Every client summarizes each of its classes from the ORIGINAL shard
    samples; the server aggregates per class over all clients (all
    domains pooled, which in multi-domain mode yields the shared shape)
    and canonicalizes the eigen-structure. Prototypes are every client's
    per-class means tagged with their source. Classes held by no client
    are omitted with a warning.
    """
    per_class: dict[int, list] = {c: [] for c in range(dataset.classes)}
    prototypes: list[Prototype] = []
    for shard in shards:
        features, labels = _client_arrays(shard, dataset)
        for class_id in np.unique(labels):
            class_id = int(class_id)
            rows = features[labels == class_id]
            stats = compute_class_stats(EmbeddingMatrix(rows, class_id))
            per_class[class_id].append(stats)
            prototypes.append(
                Prototype(class_id, shard.client_id, shard.domain, stats.mean)
            )

    shapes: dict[int, GeometricShape] = {}
    for class_id, stats_list in per_class.items():
        if not stats_list:
            logger.warning("class %d absent from every client; shape omitted", class_id)
            continue
        shapes[class_id] = build_shape(aggregate_global_stats(stats_list))
    return GeometryBundle(shapes, tuple(prototypes))


def run_local_training(
    features: np.ndarray,
    labels: np.ndarray,
    global_params: LinearClassifierParams,
    sgd: SgdConfig,
    local_rounds: int,
    rng: np.random.Generator,
) -> ClientUpdate:
    """Local SGD: ``local_rounds`` shuffled epochs from the global params.

    Returns the new parameters plus the training-set size used as the
    aggregation weight. local_rounds = 0 is a test hook returning the
    global params unchanged.
    """
    n = features.shape[0]
    if n == 0:
        raise DataValidationError("client has no training samples")
    params = global_params
    velocity = LinearClassifierParams.zeros(params.num_classes, params.dim)
    for _ in range(local_rounds):
        order = rng.permutation(n)
        for start in range(0, n, sgd.batch_size):
            batch_idx = order[start : start + sgd.batch_size]
            loss, grads = loss_and_grad(
                params, features[batch_idx], labels[batch_idx], sgd.weight_decay
            )
            params, velocity = sgd_step(params, velocity, grads, sgd)
    return ClientUpdate(params, float(n))


def _weighted_mean_exact(arrays: list[np.ndarray], coeffs: list[float]) -> np.ndarray:
    """Entrywise weighted mean that is exactly order-independent.

    Accumulates coefficient-scaled deviations from the entrywise minimum
    (an order-free reference) with correctly-rounded summation: identical
    inputs yield the input back bit-for-bit, and permuting clients cannot
    change any entry.
    """
    stack = np.stack(arrays)
    ref = stack.min(axis=0)
    terms = stack - ref
    for k, coeff in enumerate(coeffs):
        terms[k] *= coeff
    flat = terms.reshape(len(arrays), -1)
    corr = np.fromiter(
        (math.fsum(flat[:, j]) for j in range(flat.shape[1])),
        dtype=np.float64,
        count=flat.shape[1],
    )
    return ref + corr.reshape(ref.shape)


def fedavg_aggregate(
    updates: Sequence[tuple[LinearClassifierParams, float]],
) -> LinearClassifierParams:
    """Weighted entrywise mean of client parameters, in float64.

    Exactly idempotent on identical parameters and exactly invariant to
    client ordering; agrees with the naive weighted sum to a few ulps.
    """
    if not updates:
        raise DataValidationError("no client updates to aggregate")
    total = math.fsum(weight for _, weight in updates)
    if total <= 0:
        raise DataValidationError("total aggregation weight must be positive")
    coeffs = [weight / total for _, weight in updates]
    weights = _weighted_mean_exact([p.weights for p, _ in updates], coeffs)
    bias = _weighted_mean_exact([p.bias for p, _ in updates], coeffs)
    return LinearClassifierParams(weights, bias)


AGGREGATORS: dict[str, Callable[..., LinearClassifierParams]] = {
    "fedavg": fedavg_aggregate,
}


def _augment_client(
    shard: ClientShard,
    features: np.ndarray,
    labels: np.ndarray,
    bundle: GeometryBundle,
    config: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """One client's augmented training set, classes in ascending order."""
    plan = config.augmentation
    stream_id = (config.seed, shard.client_id)
    blocks: list[np.ndarray] = []
    block_labels: list[np.ndarray] = []
    local_classes = set(int(c) for c in np.unique(labels))
    dim = features.shape[1]

    for class_id in sorted(bundle.shapes):
        shape = bundle.shapes[class_id]
        rows = features[labels == class_id]
        if plan.mode == SINGLE_DOMAIN:
            if class_id not in local_classes:
                continue
            out = augment_single_domain(
                EmbeddingMatrix(rows, class_id), shape, plan, stream_id
            )
        else:
            foreign = [
                p
                for p in bundle.prototypes
                if p.class_id == class_id and p.source_client != shard.client_id
            ]
            if not config.step2_enabled:
                foreign = []
            if class_id not in local_classes and not foreign:
                continue
            out = augment_multi_domain(
                EmbeddingMatrix(rows, class_id), shape, foreign, plan, stream_id
            )
        blocks.append(out.data)
        block_labels.append(np.full(out.n, class_id, dtype=np.int64))

    if not blocks:
        raise DataValidationError(
            f"client {shard.client_id} ended up with no training samples"
        )
    return np.concatenate(blocks).astype(np.float32), np.concatenate(block_labels)


def run_federation(
    config: ExperimentConfig,
    dataset: EmbeddingDataset,
    workers: int = 1,
) -> FederationResult:
    """Run the full protocol; deterministic under (config, dataset) for any worker count."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    shards = build_partition(dataset, config.partition)

    originals = [_client_arrays(shard, dataset) for shard in shards]
    if config.ggeur_enabled:
        bundle = prepare_geometry(shards, dataset, config)
        training = [
            _augment_client(shard, feats, labels, bundle, config)
            for shard, (feats, labels) in zip(shards, originals)
        ]
    else:
        training = originals

    weights = [
        float(feats.shape[0]) if config.weight_by_augmented else float(orig[0].shape[0])
        for (feats, _), orig in zip(training, originals)
    ]

    aggregate = AGGREGATORS[config.aggregator]
    params = LinearClassifierParams.zeros(dataset.classes, dataset.dim)
    domain_names = [split.domain for split in dataset.domains]
    records: list[RoundRecord] = []

    def train_one(client: int, round_index: int) -> ClientUpdate:
        features, labels = training[client]
        rng = substream(config.seed, "train", round_index, client)
        update = run_local_training(
            features, labels, params, config.sgd, config.local_rounds, rng
        )
        return ClientUpdate(update.params, weights[client])

    for round_index in range(1, config.rounds + 1):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                updates = list(
                    pool.map(lambda k: train_one(k, round_index), range(len(shards)))
                )
        else:
            updates = [train_one(k, round_index) for k in range(len(shards))]
        params = aggregate([(u.params, u.weight) for u in updates])

        per_domain_acc: dict[str, float] = {}
        per_domain_loss: dict[str, float] = {}
        for split in dataset.domains:
            per_domain_acc[split.domain] = evaluate_top1(
                params, split.test.data, split.test.labels
            )
            per_domain_loss[split.domain] = evaluate_loss(
                params, split.test.data, split.test.labels
            )
        per_client_acc = {
            shard.client_id: per_domain_acc[shard.domain] for shard in shards
        }
        records.append(
            RoundRecord(round_index, per_domain_acc, per_domain_loss, per_client_acc)
        )
        logger.info(
            "round %d: avg accuracy %.4f",
            round_index,
            float(np.mean([per_domain_acc[d] for d in domain_names])),
        )
    return FederationResult(records, params)
