"""
Normalized-cut spectral clustering of the view graph.
"""

import logging
import math
from typing import List, Tuple, Union

import numpy as np
from scipy import linalg

from ..exceptions import ConfigError, IsolatedNodeError, NumericError
from ..models import AffinityMatrix, ClusterAssignment, SpectralConfig

logger = logging.getLogger(__name__)

ArrayOrAffinity = Union[AffinityMatrix, np.ndarray]


def _matrix(A: ArrayOrAffinity) -> np.ndarray:
    return np.asarray(A.a if isinstance(A, AffinityMatrix) else A, dtype=float)


def normalized_laplacian(A: ArrayOrAffinity) -> np.ndarray:
    """
    Symmetric normalization ``D^{-1/2} A D^{-1/2}`` with ``D = diag(row sums)``.

    Raises:
        IsolatedNodeError: a row sums to zero.
    """
    a = _matrix(A)
    d = a.sum(axis=1)
    isolated = np.flatnonzero(d <= 0)
    if isolated.size:
        raise IsolatedNodeError(f"frames with zero total affinity: {isolated.tolist()}")
    inv_sqrt = 1.0 / np.sqrt(d)
    L = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return 0.5 * (L + L.T)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for c in range(out.shape[1]):
        col = out[:, c]
        scale = np.max(np.abs(col))
        nonzero = np.flatnonzero(np.abs(col) > 1e-12 * scale) if scale > 0 else []
        if len(nonzero) and col[nonzero[0]] < 0:
            out[:, c] = -col
    return out


def _eigen(L: np.ndarray, config: SpectralConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Selected eigenvalues and sign-canonical eigenvectors (columns)."""
    n = L.shape[0]
    k = config.k
    try:
        values, vectors = linalg.eigh(L)
    except linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition did not converge: {e}") from e

    if config.log2_embedding:
        # second-smallest and up of I - L, i.e. L's spectrum below the top eigenvalue
        count = max(1, math.ceil(math.log2(k))) if k > 1 else 1
        start = n - 2 if n > 1 else 0
        idx = np.arange(start, max(start - count, -1), -1)
    else:
        count = config.n_eigenvectors or k
        idx = np.arange(n - 1, n - 1 - min(count, n), -1)

    values, vectors = values[idx], vectors[:, idx]
    residual = np.linalg.norm(L @ vectors - vectors * values, axis=0)
    bound = config.eigen_tolerance * max(np.linalg.norm(L, 2), 1.0)
    if np.any(residual > bound):
        raise NumericError(f"eigenpair residual {residual.max():.3e} exceeds {bound:.3e}")
    return values, _canonical_signs(vectors)


def spectral_embed(L: np.ndarray, config: SpectralConfig) -> np.ndarray:
    """
    Row-normalized spectral embedding.

    Columns are the eigenvectors of ``L`` for its largest eigenvalues
    (``n_eigenvectors``, default ``k``), sign-fixed so that the first nonzero
    component is positive. Rows are scaled to unit length; zero rows stay zero.
    """
    return _embedding(L, config)[1]


def _embedding(L: np.ndarray, config: SpectralConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and row-normalized eigenvector rows."""
    values, vectors = _eigen(L, config)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return values, np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 1e-15)


def _kmeans_pp(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centers = [rows[rng.integers(n)]]
    d2 = np.sum((rows - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(rows[idx])
        d2 = np.minimum(d2, np.sum((rows - rows[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(
    rows: np.ndarray, centers: np.ndarray, max_iters: int
) -> Tuple[np.ndarray, np.ndarray, float, List[int]]:
    k = centers.shape[0]
    labels = np.full(rows.shape[0], -1)
    for _ in range(max_iters):
        d2 = np.sum((rows[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        dist = d2[np.arange(rows.shape[0]), new_labels]
        for c in range(k):
            if not np.any(new_labels == c):
                counts = np.bincount(new_labels, minlength=k)
                movable = counts[new_labels] > 1
                if not movable.any():
                    break
                far = int(np.argmax(np.where(movable, dist, -1.0)))
                new_labels[far] = c
                dist[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = np.array([rows[labels == c].mean(axis=0) for c in range(k)])
    d2 = np.sum((rows - centers[labels]) ** 2, axis=1)
    empty = [c for c in range(k) if not np.any(labels == c)]
    return labels, centers, float(d2.sum()), empty


def _canonical_labels(labels: np.ndarray, k: int) -> np.ndarray:
    mapping = {}
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
    for lab in range(k):
        if lab not in mapping:
            mapping[lab] = len(mapping)
    return np.array([mapping[lab] for lab in labels], dtype=int)


def kmeans(rows: np.ndarray, k: int, config: SpectralConfig) -> ClusterAssignment:
    """
    Best-of-restarts k-means with k-means++ seeding.

    Restart r draws from its own stream spawned off ``config.rng_seed``; the
    lowest distortion wins, earlier restarts winning ties. Labels are
    renumbered by first occurrence.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] < 1:
        raise ValueError(f"k-means rows must be an (N, d) matrix with d >= 1, got {rows.shape}")
    n = rows.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"spectral.k={k} must lie in [1, N={n}]")

    best = None
    streams = np.random.SeedSequence(config.rng_seed).spawn(config.kmeans_restarts)
    for restart, seq in enumerate(streams):
        rng = np.random.default_rng(seq)
        centers = _kmeans_pp(rows, k, rng)
        labels, _, distortion, empty = _lloyd(rows, centers, config.kmeans_max_iters)
        logger.debug("k-means restart %d: distortion %.6g", restart, distortion)
        if best is None or distortion < best[1]:
            best = (labels, distortion, empty)

    labels, distortion, _ = best
    canonical = _canonical_labels(labels, k)
    used = set(canonical.tolist())
    empty_ids = [c for c in range(k) if c not in used]
    if empty_ids:
        logger.warning("k-means left %d empty cluster(s): %s", len(empty_ids), empty_ids)
    return ClusterAssignment(
        labels=canonical,
        k=k,
        permutation=np.argsort(canonical, kind="stable"),
        empty_clusters=empty_ids,
        distortion=distortion,
    )


def cluster_views(A: ArrayOrAffinity, config: SpectralConfig) -> ClusterAssignment:
    """
    Cluster frames into ``config.k`` rigid groups.

    Returns the assignment together with the block-diagonal rearrangement
    ``A[perm][:, perm]`` and the eigenvalues used for the embedding.
    """
    a = _matrix(A)
    config.validate_for(a.shape[0])
    L = normalized_laplacian(a)
    values, rows = _embedding(L, config)
    assignment = kmeans(rows, config.k, config)
    perm = assignment.permutation
    assignment.rearranged = a[np.ix_(perm, perm)]
    assignment.eigenvalues = values
    logger.info(
        "clustered %d frames into %d groups (distortion %.4g)",
        a.shape[0],
        config.k,
        assignment.distortion,
    )
    return assignment


def eigengap_report(A: ArrayOrAffinity, count: int = 20) -> List[Tuple[int, float, float]]:
    """
    Leading eigenvalues of the normalized affinity and their successive gaps.

    Returns:
        ``(rank, eigenvalue, gap_to_next)`` triples in descending order; a
        large gap after rank r suggests ``k = r``.
    """
    values = linalg.eigvalsh(normalized_laplacian(A))[::-1]
    count = min(count, values.shape[0])
    gaps = np.append(values[:-1] - values[1:], 0.0)
    return [(r + 1, float(values[r]), float(gaps[r])) for r in range(count)]


def block_contrast(A: ArrayOrAffinity, labels: np.ndarray) -> float:
    """Mean within-cluster over mean between-cluster off-diagonal affinity."""
    a = _matrix(A)
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(a.shape[0], dtype=bool)
    within = a[same & off]
    between = a[~same]
    if within.size == 0:
        return 0.0
    if between.size == 0 or between.mean() == 0:
        return float("inf")
    return float(within.mean() / between.mean())
