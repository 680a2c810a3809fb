"""Eigen-structure-guided sample generation on clients.

Offsets are random linear combinations of the broadcast eigenvectors,
each term scaled by its eigenvalue (as-is, not square-rooted):

    offset = sum_m eps_m * lambda_m * xi_m,   eps_m ~ N(0, 1)

so offsets are zero-mean with covariance V diag(lambda^2) V^T. In the
single-domain mode every local class is topped up to a target count by
adding offsets to existing samples; in the multi-domain mode a second
step additionally plants offset clouds on class prototypes received from
other clients to stand in for their domains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataValidationError
from .geometry import EmbeddingMatrix, GeometricShape
from .rng import substream

SINGLE_DOMAIN = "single_domain"
MULTI_DOMAIN = "multi_domain"

# Provenance byte per output row.
PROV_ORIGINAL = 0
PROV_STEP1 = 1
PROV_STEP2 = 2


@dataclass(frozen=True)
class AugmentationPlan:
    """Targets for sample generation.

    target_per_class applies in single-domain mode (total per class after
    augmentation); step1_target and step2_per_prototype apply in
    multi-domain mode. eigen_rank_limit caps how many leading eigen
    directions offsets use; None means all p (exact behavior, the cap is
    a performance knob only).
    """

    mode: str
    target_per_class: int = 2000
    step1_target: int = 500
    step2_per_prototype: int = 500
    eigen_rank_limit: int | None = None

    def __post_init__(self):
        if self.mode not in (SINGLE_DOMAIN, MULTI_DOMAIN):
            raise ConfigError(f"unknown augmentation mode {self.mode!r}")
        if min(self.target_per_class, self.step1_target, self.step2_per_prototype) < 0:
            raise ConfigError("augmentation targets must be >= 0")
        if self.eigen_rank_limit is not None and self.eigen_rank_limit < 1:
            raise ConfigError("eigen_rank_limit must be >= 1")


@dataclass(frozen=True)
class Prototype:
    """A class mean shared by another client, standing in for its domain."""

    class_id: int
    source_client: int
    source_domain: str
    mean: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or not np.isfinite(mean).all():
            raise DataValidationError("prototype mean must be a finite vector")
        object.__setattr__(self, "mean", mean)


class OffsetSampler:
    """Draws eigen-guided offsets from one named deterministic stream.

    The stream is identified by (seed, client_id, class_id, purpose);
    identical identifiers replay identical offset sequences.
    """

    def __init__(
        self,
        shape: GeometricShape,
        seed: int,
        client_id: int,
        class_id: int,
        purpose: str,
        rank: int | None = None,
    ):
        p = shape.dim
        if rank is None:
            rank = p
        if not 1 <= rank <= p:
            raise ConfigError(f"rank must be in [1, {p}], got {rank}")
        self.shape = shape
        self.rank = rank
        self._rng = substream(seed, "offsets", client_id, class_id, purpose)
        # Precompute the (rank, p) map from eps to offsets.
        scaled = shape.eigenvalues[:rank, None] * shape.eigenvectors[:, :rank].T
        self._basis = scaled

    def sample_batch(self, count: int) -> np.ndarray:
        """(count, p) offsets; a batch equals that many single draws."""
        eps = self._rng.standard_normal((count, self.rank))
        return eps @ self._basis


def sample_offset(sampler: OffsetSampler) -> np.ndarray:
    """One offset vector from the sampler's stream."""
    return sampler.sample_batch(1)[0]


@dataclass(frozen=True)
class AugmentedClass:
    """One class's training rows after augmentation, with provenance tags.

    provenance[i] is PROV_ORIGINAL, PROV_STEP1, or PROV_STEP2. Original
    rows are carried through bit-unmodified.
    """

    class_id: int
    data: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        if self.data.shape[0] != self.provenance.shape[0]:
            raise DataValidationError("provenance length must match row count")

    @property
    def n(self) -> int:
        return self.data.shape[0]


def _generation_quotas(n: int, deficit: int) -> np.ndarray:
    """Round-robin split of ``deficit`` new samples over ``n`` originals.

    Quotas differ by at most 1; the remainder goes to the earliest
    originals.
    """
    quotas = np.full(n, deficit // n, dtype=np.int64)
    quotas[: deficit % n] += 1
    return quotas


def _generate_on_anchors(
    anchors: np.ndarray,
    quotas: np.ndarray,
    sampler: OffsetSampler,
) -> np.ndarray:
    total = int(quotas.sum())
    if total == 0:
        return np.empty((0, anchors.shape[1]), dtype=anchors.dtype)
    base = np.repeat(anchors, quotas, axis=0)
    generated = base + sampler.sample_batch(total)
    return generated.astype(anchors.dtype)


def augment_single_domain(
    samples: EmbeddingMatrix,
    shape: GeometricShape,
    plan: AugmentationPlan,
    stream_id: tuple[int, int],
) -> AugmentedClass:
    """Top a local class up to the plan's per-class target.

    Keeps the n originals and appends max(0, target - n) generated rows
    x_j + offset, with per-original generation counts assigned round-robin
    (they differ by at most 1). When n already meets the target nothing is
    generated.

    Args:
        samples: the client's local samples of this class (n >= 1).
        shape: the class's global geometric shape.
        plan: augmentation plan with mode "single_domain".
        stream_id: (seed, client_id) naming the offset stream.

    Returns:
        AugmentedClass of exactly max(n, target_per_class) rows.

    Raises:
        DataValidationError: when the class is empty; the caller should
            skip it (there is no anchor to generate from).
    """
    if plan.mode != SINGLE_DOMAIN:
        raise ConfigError(f"plan mode must be {SINGLE_DOMAIN!r}, got {plan.mode!r}")
    return _augment_to_target(samples, shape, plan.target_per_class, plan, stream_id, "step1")


def _augment_to_target(
    samples: EmbeddingMatrix,
    shape: GeometricShape,
    target: int,
    plan: AugmentationPlan,
    stream_id: tuple[int, int],
    purpose: str,
) -> AugmentedClass:
    if samples.n == 0:
        raise DataValidationError(
            f"class {samples.class_id} has no local samples; skip augmentation"
        )
    if samples.p != shape.dim:
        raise DataValidationError(
            f"dimension mismatch: samples {samples.p}, shape {shape.dim}"
        )
    seed, client_id = stream_id
    n = samples.n
    deficit = max(0, target - n)
    sampler = OffsetSampler(
        shape, seed, client_id, samples.class_id, purpose, rank=plan.eigen_rank_limit
    )
    generated = _generate_on_anchors(samples.data, _generation_quotas(n, deficit), sampler)
    data = np.concatenate([samples.data, generated], axis=0)
    provenance = np.concatenate(
        [
            np.full(n, PROV_ORIGINAL, dtype=np.uint8),
            np.full(deficit, PROV_STEP1, dtype=np.uint8),
        ]
    )
    return AugmentedClass(samples.class_id, data, provenance)


def augment_multi_domain(
    samples: EmbeddingMatrix,
    shared_shape: GeometricShape,
    prototypes: list[Prototype],
    plan: AugmentationPlan,
    stream_id: tuple[int, int],
) -> AugmentedClass:
    """Two-step augmentation against label skew and domain skew.

    Step 1 tops the local class up to plan.step1_target exactly like the
    single-domain path. Step 2 then appends, for each foreign prototype,
    plan.step2_per_prototype rows prototype + offset; prototypes are
    processed in source-client order so output is caller-order-independent.
    An empty prototype list degenerates to Step 1 alone.

    A class with no local samples is allowed only when prototypes exist:
    Step 1 has no anchors and is skipped, Step 2 still runs.

    Returns:
        AugmentedClass of max(n, step1_target) + M * len(prototypes) rows
        (n >= 1), tagged original / step1 / step2.
    """
    if plan.mode != MULTI_DOMAIN:
        raise ConfigError(f"plan mode must be {MULTI_DOMAIN!r}, got {plan.mode!r}")
    for proto in prototypes:
        if proto.class_id != samples.class_id:
            raise DataValidationError(
                f"prototype class {proto.class_id} does not match {samples.class_id}"
            )
        if proto.mean.size != shared_shape.dim:
            raise DataValidationError("prototype dimension mismatch")

    if samples.n > 0:
        step1 = _augment_to_target(
            samples, shared_shape, plan.step1_target, plan, stream_id, "step1"
        )
        data, provenance = step1.data, step1.provenance
    elif prototypes:
        data = np.empty((0, shared_shape.dim), dtype=samples.data.dtype)
        provenance = np.empty(0, dtype=np.uint8)
    else:
        raise DataValidationError(
            f"class {samples.class_id} has no local samples; skip augmentation"
        )

    if prototypes and plan.step2_per_prototype > 0:
        seed, client_id = stream_id
        sampler = OffsetSampler(
            shared_shape, seed, client_id, samples.class_id, "step2",
            rank=plan.eigen_rank_limit,
        )
        anchors = np.stack(
            [p.mean for p in sorted(prototypes, key=lambda p: p.source_client)]
        ).astype(data.dtype)
        quotas = np.full(len(prototypes), plan.step2_per_prototype, dtype=np.int64)
        step2 = _generate_on_anchors(anchors, quotas, sampler)
        data = np.concatenate([data, step2], axis=0)
        provenance = np.concatenate(
            [provenance, np.full(step2.shape[0], PROV_STEP2, dtype=np.uint8)]
        )
    return AugmentedClass(samples.class_id, data, provenance)
