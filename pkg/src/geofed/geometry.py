"""Per-class embedding statistics and the geometry they induce.

Clients summarize each class as (count, mean, covariance). The server
recombines those local statistics into the exact pooled covariance of the
class (the reconstruction is algebraically exact, not an approximation),
eigendecomposes it, and broadcasts the resulting geometric shape: the
sorted eigenvalues plus an orthonormal eigenbasis. Shapes of the same
class in different domains can be compared with a rank-paired similarity
score.

All statistics use population normalization (1/n) and are accumulated in
float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError

# Symmetry tolerances: per-entry absolute deviation allowed at container
# construction vs. at eigendecomposition entry.
STATS_SYMMETRY_ATOL = 1e-12
EIG_SYMMETRY_ATOL = 1e-10

# Eigenvalues of a covariance may dip slightly negative from rounding on
# low-rank matrices; anything below -1e-8 * lambda_max (plus a tiny
# absolute floor for all-zero spectra) is treated as a real defect.
EIG_CLAMP_REL = 1e-8
EIG_CLAMP_ABS = 1e-12


def _check_finite_rows(data: np.ndarray) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        raise DataValidationError(f"non-finite embedding entry in row {row}")


def _check_symmetric(matrix: np.ndarray, atol: float, what: str) -> None:
    dev = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    if dev > atol:
        raise DataValidationError(
            f"{what} is not symmetric: max entry deviation {dev:.3e} > {atol:.0e}"
        )


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Embedding rows of one class: n samples by p dimensions.

    Attributes:
        data: (n, p) array of finite values; n may be 0, p must be >= 1.
        class_id: integer category label of every row.
    """

    data: np.ndarray
    class_id: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataValidationError(f"embedding matrix must be 2-D, got {data.ndim}-D")
        if data.shape[1] < 1:
            raise DataValidationError("embedding dimension must be >= 1")
        _check_finite_rows(data)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ClassStats:
    """Summary a client uploads for one class: (count, mean, covariance).

    A count of 0 marks the empty placeholder: mean and covariance are
    all-zero and ``empty`` is set. Covariance is population-normalized
    and symmetric within STATS_SYMMETRY_ATOL per entry.
    """

    class_id: int
    count: int
    mean: np.ndarray
    covariance: np.ndarray
    empty: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DataValidationError(
                f"stats shape mismatch: mean {mean.shape}, covariance {cov.shape}"
            )
        if self.count < 0:
            raise DataValidationError("sample count must be >= 0")
        if self.empty != (self.count == 0):
            raise DataValidationError("empty flag must match count == 0")
        if self.empty and (mean.any() or cov.any()):
            raise DataValidationError("empty stats must carry all-zero placeholders")
        _check_symmetric(cov, STATS_SYMMETRY_ATOL, "class covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GlobalClassStats:
    """Server-side pooled statistics of one class across all clients."""

    class_id: int
    total_count: int
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DataValidationError(
                f"stats shape mismatch: mean {mean.shape}, covariance {cov.shape}"
            )
        _check_symmetric(cov, STATS_SYMMETRY_ATOL, "global covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GeometricShape:
    """Eigenvalues and eigenvectors of one class's global covariance.

    Eigenvalues are sorted non-increasing and clamped to >= 0; column m of
    ``eigenvectors`` is the unit eigenvector for eigenvalue m. Each column
    is in canonical sign form: its largest-magnitude entry is non-negative.
    """

    class_id: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=np.float64)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        p = vals.size
        if vecs.shape != (p, p):
            raise DataValidationError(
                f"shape mismatch: {p} eigenvalues but eigenvector matrix {vecs.shape}"
            )
        if (np.diff(vals) > 0).any():
            raise DataValidationError("eigenvalues must be non-increasing")
        if (vals < 0).any():
            raise DataValidationError("eigenvalues must be non-negative")
        ortho = float(np.linalg.norm(vecs.T @ vecs - np.eye(p)))
        if ortho > 1e-8:
            raise DataValidationError(
                f"eigenvector matrix not orthonormal: residual {ortho:.3e}"
            )
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size


def compute_class_stats(samples: EmbeddingMatrix) -> ClassStats:
    """Population mean and covariance of one client's class samples.

    mean = (1/n) sum x_j and covariance = (1/n) sum (x_j - mean)(x_j - mean)^T,
    accumulated in float64. n = 0 yields the flagged-empty placeholder.

    Args:
        samples: the client's embeddings of a single class.

    Returns:
        ClassStats with population-normalized covariance.
    """
    x = samples.data.astype(np.float64, copy=False)
    n, p = x.shape
    if n == 0:
        return ClassStats(samples.class_id, 0, np.zeros(p), np.zeros((p, p)), empty=True)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    return ClassStats(samples.class_id, n, mean, cov)


def aggregate_global_stats(locals_: Sequence[ClassStats]) -> GlobalClassStats:
    """Exact pooled statistics of one class from per-client summaries.

    With N = sum_k n_k:

        mean  = (1/N) sum_k n_k mean_k
        cov   = (1/N) (sum_k n_k cov_k
                       + sum_k n_k (mean_k - mean)(mean_k - mean)^T)

    which equals the population covariance of the pooled raw samples
    exactly (the cross terms vanish identically, so this is algebra, not
    an estimate). Empty uploads contribute weight 0 and are skipped; the
    result is symmetrized as (A + A^T)/2 after accumulation.

    Args:
        locals_: per-client ClassStats, all for the same class and dimension.

    Returns:
        GlobalClassStats over the contributing clients.

    Raises:
        DataValidationError: on empty input, all-empty uploads, or a
            class/dimension mismatch.
    """
    if not locals_:
        raise DataValidationError("no local statistics to aggregate")
    class_id = locals_[0].class_id
    p = locals_[0].dim
    for stats in locals_:
        if stats.class_id != class_id:
            raise DataValidationError(
                f"class mismatch in aggregation: {stats.class_id} != {class_id}"
            )
        if stats.dim != p:
            raise DataValidationError(
                f"dimension mismatch in aggregation: {stats.dim} != {p}"
            )
    contributing = [s for s in locals_ if not s.empty]
    if not contributing:
        raise DataValidationError(f"all uploads for class {class_id} are empty")

    total = sum(s.count for s in contributing)
    mean = np.zeros(p)
    for s in contributing:
        mean += s.count * s.mean
    mean /= total

    cov = np.zeros((p, p))
    for s in contributing:
        delta = s.mean - mean
        cov += s.count * (s.covariance + np.outer(delta, delta))
    cov /= total
    cov = 0.5 * (cov + cov.T)
    return GlobalClassStats(class_id, total, mean, cov)


def _canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is non-negative."""
    if vectors.size == 0:
        return vectors
    anchor = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[anchor, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def symmetric_eigendecompose(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix in descending order.

    Backed by LAPACK (numpy.linalg.eigh). Eigenvalues are returned
    unclamped, sorted non-increasing with ties kept in their original
    (ascending-solver) index order; eigenvectors are columns in canonical
    sign form.

    Args:
        matrix: symmetric (p, p) array; entries must be finite and the
            matrix symmetric within EIG_SYMMETRY_ATOL per entry.

    Returns:
        (eigenvalues, eigenvectors) with matrix == V diag(w) V^T up to
        floating-point residual.

    Raises:
        DataValidationError: on NaN entries or asymmetry beyond tolerance.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise DataValidationError("matrix contains non-finite entries")
    _check_symmetric(m, EIG_SYMMETRY_ATOL, "matrix")
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    order = np.argsort(-vals, kind="stable")
    return vals[order], _canonical_sign(vecs[:, order])


def build_shape(stats: GlobalClassStats) -> GeometricShape:
    """Geometric shape of a class: eigen-structure of its global covariance.

    Negative eigenvalues within the rounding band (>= -1e-8 * lambda_max,
    minus a tiny absolute floor) are clamped to 0; low-rank covariances
    routinely produce them. Anything below the band is rejected.
    """
    vals, vecs = symmetric_eigendecompose(stats.covariance)
    lam_max = float(vals[0]) if vals.size else 0.0
    floor = -(EIG_CLAMP_REL * max(lam_max, 0.0) + EIG_CLAMP_ABS)
    if vals.size and float(vals[-1]) < floor:
        raise DataValidationError(
            f"covariance of class {stats.class_id} has eigenvalue "
            f"{vals[-1]:.3e} below tolerance {floor:.3e}"
        )
    return GeometricShape(stats.class_id, np.maximum(vals, 0.0), vecs)


def shape_similarity(a: GeometricShape, b: GeometricShape, top: int = 5) -> float:
    """Similarity of two shapes: sum of |<xi_a^i, xi_b^i>| over the top ranks.

    Eigenvectors are paired strictly by rank index i = 1..top. The score
    lies in [0, top]; it is symmetric and invariant to eigenvector sign
    flips. Under eigenvalue ties the top-i pairing is basis-dependent.

    Args:
        a, b: shapes of equal dimension.
        top: number of leading eigenvector pairs to compare (<= p).

    Returns:
        Similarity in [0, top].
    """
    if a.dim != b.dim:
        raise DataValidationError(f"dimension mismatch: {a.dim} != {b.dim}")
    if not 1 <= top <= a.dim:
        raise DataValidationError(f"top must be in [1, {a.dim}], got {top}")
    dots = np.einsum("ij,ij->j", a.eigenvectors[:, :top], b.eigenvectors[:, :top])
    return float(np.abs(dots).sum())


@dataclass(frozen=True)
class SimilarityReport:
    """Per-class shape similarity matrices for every unordered domain pair.

    matrices[(A, B)][i, j] compares class ``classes[i]`` of domain A with
    class ``classes[j]`` of domain B. Rows or columns of classes missing
    from a domain are NaN and the gap is listed in ``missing``.
    """

    classes: tuple[int, ...]
    domains: tuple[str, ...]
    matrices: dict[tuple[str, str], np.ndarray] = field(repr=False)
    missing: tuple[tuple[str, int], ...] = ()


def cross_domain_similarity_matrix(
    shapes_by_domain: Mapping[str, Sequence[GeometricShape]],
    top: int = 5,
) -> SimilarityReport:
    """Class-by-class shape similarity for every unordered domain pair.

    Args:
        shapes_by_domain: per-domain list of class shapes. All domains are
            expected to cover the same classes; a missing class is flagged
            and its rows/columns filled with NaN rather than rejected.
        top: rank cutoff passed through to shape_similarity.

    Returns:
        SimilarityReport over the sorted union of class ids.
    """
    if not shapes_by_domain:
        raise DataValidationError("no domains given")
    by_domain: dict[str, dict[int, GeometricShape]] = {}
    for domain, shapes in shapes_by_domain.items():
        by_domain[str(domain)] = {s.class_id: s for s in shapes}
    domains = tuple(sorted(by_domain))
    classes = tuple(sorted({c for shapes in by_domain.values() for c in shapes}))
    missing = tuple(
        (d, c) for d in domains for c in classes if c not in by_domain[d]
    )

    matrices: dict[tuple[str, str], np.ndarray] = {}
    for ia, dom_a in enumerate(domains):
        for dom_b in domains[ia:]:
            mat = np.full((len(classes), len(classes)), np.nan)
            for i, ca in enumerate(classes):
                shape_a = by_domain[dom_a].get(ca)
                if shape_a is None:
                    continue
                for j, cb in enumerate(classes):
                    shape_b = by_domain[dom_b].get(cb)
                    if shape_b is None:
                        continue
                    mat[i, j] = shape_similarity(shape_a, shape_b, top)
            matrices[(dom_a, dom_b)] = mat
    return SimilarityReport(classes, domains, matrices, missing)
