"""Embedding dataset containers and a synthetic multi-domain generator.

Container format "EMB1", all integers little-endian:

    bytes 0-3   magic ASCII "EMB1"
    bytes 4-7   u32 version (1)
    bytes 8-11  u32 n (rows)
    bytes 12-15 u32 p (embedding dimension)
    byte  16    u8 dtype code (1 = float32)
    byte  17    u8 flag: 1 = per-row provenance tags appended
    bytes 18-19 zero padding
    ...         n*p float32 row-major embeddings
    ...         n u32 labels
    ...         n u8 provenance tags (only when flagged)

A dataset on disk is one manifest JSON plus one EMB1 file per domain
split. Sibling containers with the same header discipline carry per-class
statistics ("STA1") and geometric shapes ("SHP1") in float64. Round-trips
are bit-exact: embeddings are stored float32 while all statistics and
shapes live in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataValidationError, FormatError
from .geometry import ClassStats, GeometricShape
from .rng import substream

_MAGIC = b"EMB1"
_STATS_MAGIC = b"STA1"
_SHAPES_MAGIC = b"SHP1"
_VERSION = 1
_DTYPE_F32 = 1
_DTYPE_F64 = 2
_HEADER = struct.Struct("<4sIIIBBBB")
_U32_MAX = 2**32 - 1


@dataclass(frozen=True)
class LabeledEmbeddings:
    """One split: (n, p) float32 rows, n integer labels, optional tags."""

    data: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if data.ndim != 2:
            raise DataValidationError("embeddings must be a 2-D matrix")
        if labels.shape != (data.shape[0],):
            raise DataValidationError(
                f"label array length {labels.shape} != row count {data.shape[0]}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        if self.provenance is not None:
            prov = np.asarray(self.provenance, dtype=np.uint8)
            if prov.shape != (data.shape[0],):
                raise DataValidationError("provenance length must match row count")
            object.__setattr__(self, "provenance", prov)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DomainSplit:
    domain: str
    train: LabeledEmbeddings
    test: LabeledEmbeddings


@dataclass(frozen=True)
class EmbeddingDataset:
    """Labeled embeddings grouped by domain, with train/test splits."""

    name: str
    dim: int
    classes: int
    domains: tuple[DomainSplit, ...]

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        for split in self.domains:
            for part in (split.train, split.test):
                if part.n and part.dim != self.dim:
                    raise DataValidationError(
                        f"domain {split.domain!r} width {part.dim} != dataset dim {self.dim}"
                    )
                if part.n and (part.labels.min() < 0 or part.labels.max() >= self.classes):
                    raise DataValidationError(
                        f"domain {split.domain!r} has labels outside [0, {self.classes})"
                    )

    def domain(self, name: str) -> DomainSplit:
        for split in self.domains:
            if split.domain == name:
                return split
        raise DataValidationError(f"no domain named {name!r}")


def write_embeddings(path, split: LabeledEmbeddings) -> None:
    """Write one split as an EMB1 container."""
    n, p = split.data.shape
    if n > _U32_MAX or p > _U32_MAX:
        raise FormatError(f"dimensions {n}x{p} overflow the u32 header fields")
    if split.labels.size and (split.labels.min() < 0 or split.labels.max() > _U32_MAX):
        raise FormatError("labels do not fit in u32")
    flag = 1 if split.provenance is not None else 0
    blob = bytearray(_HEADER.pack(_MAGIC, _VERSION, n, p, _DTYPE_F32, flag, 0, 0))
    blob += split.data.astype("<f4", copy=False).tobytes()
    blob += split.labels.astype("<u4").tobytes()
    if split.provenance is not None:
        blob += split.provenance.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_embeddings(path) -> LabeledEmbeddings:
    """Read an EMB1 container, rejecting malformed files with their offset."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the fixed header", offset=len(raw))
    magic, version, n, p, dtype, flag, pad1, pad2 = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype != _DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=16)
    if flag not in (0, 1):
        raise FormatError(f"bad provenance flag {flag}", offset=17)
    if pad1 or pad2:
        raise FormatError("nonzero padding bytes", offset=18)

    expected = _HEADER.size + n * p * 4 + n * 4 + (n if flag else 0)
    if len(raw) < expected:
        raise FormatError(
            f"truncated: expected {expected} bytes, file ends early", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError("unexpected trailing bytes", offset=expected)

    pos = _HEADER.size
    data = np.frombuffer(raw, dtype="<f4", count=n * p, offset=pos).reshape(n, p)
    pos += n * p * 4
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=pos).astype(np.int64)
    pos += n * 4
    provenance = None
    if flag:
        provenance = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).copy()
    return LabeledEmbeddings(data.copy(), labels, provenance)


def save_dataset(dataset: EmbeddingDataset, out_dir) -> Path:
    """Write manifest.json plus one EMB1 file per domain split; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split in dataset.domains:
        train_path = f"{split.domain}.train.emb"
        test_path = f"{split.domain}.test.emb"
        write_embeddings(out / train_path, split.train)
        write_embeddings(out / test_path, split.test)
        entries.append(
            {"domain": split.domain, "train_path": train_path, "test_path": test_path}
        )
    manifest = {
        "name": dataset.name,
        "dim": dataset.dim,
        "classes": dataset.classes,
        "domains": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_dataset(manifest_path) -> EmbeddingDataset:
    """Load a dataset from its manifest; paths resolve relative to it."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    base = manifest_path.parent
    try:
        splits = tuple(
            DomainSplit(
                entry["domain"],
                train=read_embeddings(base / entry["train_path"]),
                test=read_embeddings(base / entry["test_path"]),
            )
            for entry in manifest["domains"]
        )
        return EmbeddingDataset(manifest["name"], manifest["dim"], manifest["classes"], splits)
    except KeyError as exc:
        raise FormatError(f"manifest missing field {exc}") from exc


def _check_container_header(raw: bytes, magic: bytes, dtype: int, path) -> tuple[int, int]:
    """Validate a 20-byte header; returns (record count, dimension)."""
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the fixed header", offset=len(raw))
    got_magic, version, count, dim, got_dtype, *pads = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if got_dtype != dtype:
        raise FormatError(f"{path}: unsupported dtype code {got_dtype}", offset=16)
    if any(pads):
        raise FormatError(f"{path}: nonzero padding bytes", offset=17)
    return count, dim


def _check_container_size(raw: bytes, expected: int, path) -> None:
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated: expected {expected} bytes, file ends early",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise FormatError(f"{path}: unexpected trailing bytes", offset=expected)


def write_stats(path, stats: Sequence[ClassStats]) -> None:
    """Persist per-class statistics as an STA1 container (float64).

    Record layout: u32 class_id, u32 count, then p mean values and p*p
    covariance values, row-major.
    """
    if not stats:
        raise DataValidationError("no statistics to write")
    p = stats[0].dim
    if any(s.dim != p for s in stats):
        raise DataValidationError("all statistics must share one dimension")
    blob = bytearray(_HEADER.pack(_STATS_MAGIC, _VERSION, len(stats), p, _DTYPE_F64, 0, 0, 0))
    for s in stats:
        blob += struct.pack("<II", s.class_id, s.count)
        blob += s.mean.astype("<f8", copy=False).tobytes()
        blob += s.covariance.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(blob))


def read_stats(path) -> list[ClassStats]:
    """Read an STA1 container back, bit-exactly."""
    raw = Path(path).read_bytes()
    count, p = _check_container_header(raw, _STATS_MAGIC, _DTYPE_F64, path)
    record = 8 + p * 8 + p * p * 8
    _check_container_size(raw, _HEADER.size + count * record, path)
    out = []
    pos = _HEADER.size
    for _ in range(count):
        class_id, n = struct.unpack_from("<II", raw, pos)
        pos += 8
        mean = np.frombuffer(raw, dtype="<f8", count=p, offset=pos).copy()
        pos += p * 8
        cov = np.frombuffer(raw, dtype="<f8", count=p * p, offset=pos).reshape(p, p).copy()
        pos += p * p * 8
        out.append(ClassStats(class_id, n, mean, cov, empty=n == 0))
    return out


def write_shapes(path, shapes: Sequence[GeometricShape]) -> None:
    """Persist geometric shapes as an SHP1 container (float64).

    Record layout: u32 class_id, 4 pad bytes, p eigenvalues, then the
    p*p eigenvector matrix row-major (column m is eigenvector m).
    """
    if not shapes:
        raise DataValidationError("no shapes to write")
    p = shapes[0].dim
    if any(s.dim != p for s in shapes):
        raise DataValidationError("all shapes must share one dimension")
    blob = bytearray(_HEADER.pack(_SHAPES_MAGIC, _VERSION, len(shapes), p, _DTYPE_F64, 0, 0, 0))
    for s in shapes:
        blob += struct.pack("<II", s.class_id, 0)
        blob += s.eigenvalues.astype("<f8", copy=False).tobytes()
        blob += s.eigenvectors.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(blob))


def read_shapes(path) -> list[GeometricShape]:
    """Read an SHP1 container back, bit-exactly."""
    raw = Path(path).read_bytes()
    count, p = _check_container_header(raw, _SHAPES_MAGIC, _DTYPE_F64, path)
    record = 8 + p * 8 + p * p * 8
    _check_container_size(raw, _HEADER.size + count * record, path)
    out = []
    pos = _HEADER.size
    for _ in range(count):
        class_id, _pad = struct.unpack_from("<II", raw, pos)
        pos += 8
        vals = np.frombuffer(raw, dtype="<f8", count=p, offset=pos).copy()
        pos += p * 8
        vecs = np.frombuffer(raw, dtype="<f8", count=p * p, offset=pos).reshape(p, p).copy()
        pos += p * p * 8
        out.append(GeometricShape(class_id, vals, vecs))
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic multi-domain embedding dataset.

    Each (domain, class) cell is Gaussian: mean = class anchor + domain
    offset, covariance = V_c diag(spectrum) V_c^T with the decaying
    spectrum spectrum[m] = scale * decay**m. With shared_basis set, all
    domains reuse one eigenbasis per class, which is exactly the
    cross-domain regularity the similarity report is meant to detect.

    anchor_rank confines class anchors to the span of the first
    anchor_rank basis directions (requires shared_basis). That stretches
    the class clouds toward each other along their own principal axes,
    so classification difficulty comes from distribution extent rather
    than mean placement; None scatters anchors over all of R^p.
    """

    name: str = "synthetic"
    dim: int = 64
    classes: int = 10
    domains: int = 1
    train_per_class: int = 200
    test_per_class: int = 50
    spectrum_scale: float = 1.0
    spectrum_decay: float = 0.9
    shared_basis: bool = True
    class_separation: float = 4.0
    domain_shift: float = 0.0
    anchor_rank: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.classes < 1 or self.domains < 1:
            raise ConfigError("dim, classes, and domains must all be >= 1")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("sample counts must be >= 0")
        if self.spectrum_scale <= 0 or not 0 < self.spectrum_decay <= 1:
            raise ConfigError("spectrum must be positive and decaying")
        if self.anchor_rank is not None:
            if not 1 <= self.anchor_rank <= self.dim:
                raise ConfigError("anchor_rank must be in [1, dim]")
            if not self.shared_basis:
                raise ConfigError("anchor_rank requires shared_basis")

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**payload)


def _random_orthonormal(p: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _unit_vector(p: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(p)
    return v / np.linalg.norm(v)


def synth_generate(spec: SyntheticSpec) -> EmbeddingDataset:
    """Deterministically generate the dataset described by ``spec``.

    Cell (d, c) draws samples mean + sum_m sqrt(s_m) eta_m v_m with eta
    standard normal, so the cell's population covariance is
    V diag(spectrum) V^T by construction.
    """
    p = spec.dim
    spectrum = spec.spectrum_scale * spec.spectrum_decay ** np.arange(p)
    sqrt_spectrum = np.sqrt(spectrum)

    if spec.anchor_rank is not None:
        # One basis for everything; anchors live in its leading span.
        global_basis = _random_orthonormal(p, substream(spec.seed, "synth", "basis"))
        shared_bases = [global_basis] * spec.classes
        class_anchors = [
            spec.class_separation
            * (
                global_basis[:, : spec.anchor_rank]
                @ _unit_vector(spec.anchor_rank, substream(spec.seed, "synth", "classmean", c))
            )
            for c in range(spec.classes)
        ]
    else:
        shared_bases = [
            _random_orthonormal(p, substream(spec.seed, "synth", "basis", c))
            for c in range(spec.classes)
        ]
        class_anchors = [
            spec.class_separation
            * _unit_vector(p, substream(spec.seed, "synth", "classmean", c))
            for c in range(spec.classes)
        ]
    domain_names = [f"domain{d}" for d in range(spec.domains)]
    domain_offsets = [
        spec.domain_shift * _unit_vector(p, substream(spec.seed, "synth", "domainshift", d))
        for d in range(spec.domains)
    ]

    splits = []
    for d, domain in enumerate(domain_names):
        parts = {}
        for part, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
            blocks, labels = [], []
            for c in range(spec.classes):
                basis = (
                    shared_bases[c]
                    if spec.shared_basis
                    else _random_orthonormal(p, substream(spec.seed, "synth", "basis", d, c))
                )
                rng = substream(spec.seed, "synth", "samples", d, c, part)
                eta = rng.standard_normal((per_class, p))
                cell = class_anchors[c] + domain_offsets[d] + (eta * sqrt_spectrum) @ basis.T
                blocks.append(cell.astype(np.float32))
                labels.append(np.full(per_class, c, dtype=np.int64))
            parts[part] = LabeledEmbeddings(
                np.concatenate(blocks) if blocks else np.empty((0, p), np.float32),
                np.concatenate(labels) if labels else np.empty(0, np.int64),
            )
        splits.append(DomainSplit(domain, parts["train"], parts["test"]))
    return EmbeddingDataset(spec.name, p, spec.classes, tuple(splits))
