"""
Block-wise rigid reconstruction.

Each cluster of frames is treated as a rigid multi-view problem: a two-view
seed, incremental PnP registration with bundle adjustment after every added
frame, and a final gauge of identity seed camera with unit seed baseline.
"""

import logging
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import GeometryError, NRSRError
from ..geometry import (
    cheirality_count,
    decompose_essential,
    essential_from_fundamental,
    fit_fundamental,
    pnp,
    reprojection_residuals,
    shape_diameter,
    triangulate_points,
)
from ..models import (
    AffinityMatrix,
    BundleConfig,
    CameraIntrinsics,
    CameraPose,
    ClusterReconstruction,
    CorrespondenceSet,
    LandmarkPair,
    RigidityParams,
    TrackSet,
)
from .affinity import AffinityBuilder
from .bundle import bundle_adjust

logger = logging.getLogger(__name__)

MIN_PARALLAX_DEG = 1.0
MAX_REGISTER_ERROR_PX = 25.0
MAX_CHEIRALITY_FRACTION = 0.05
MAX_STRUCTURE_SPREAD = 1e4  # RMS point radius in seed baselines
MIN_STRUCTURE_RANK_RATIO = 1e-6


class SeedInitError(GeometryError):
    """Two-view initialization could not produce a usable seed."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _PairLookup:
    """Affinity and homography scores indexed by global frame ids."""

    def __init__(self, affinity: AffinityMatrix, frames: Optional[Sequence[int]] = None):
        self.affinity = affinity
        self.position = {f: k for k, f in enumerate(frames)} if frames is not None else None

    def _idx(self, f: int) -> int:
        return self.position[f] if self.position is not None else f

    def a(self, i: int, j: int) -> float:
        return float(self.affinity.a[self._idx(i), self._idx(j)])

    def p_h(self, i: int, j: int) -> float:
        if self.affinity.p_h is None:
            return 0.0
        return float(self.affinity.p_h[self._idx(i), self._idx(j)])


def rank_seed_pairs(
    frames: Sequence[int], affinity: AffinityMatrix, lookup=None
) -> List[Tuple[int, int]]:
    """In-cluster pairs by descending ``a(i, j) * (1 - p_h(i, j))``, ties by smaller ``(i, j)``."""
    lookup = lookup or _PairLookup(affinity)
    frames = sorted(int(f) for f in frames)
    pairs = [(i, j) for k, i in enumerate(frames) for j in frames[k + 1 :]]
    return sorted(pairs, key=lambda ij: (-lookup.a(*ij) * (1.0 - lookup.p_h(*ij)), ij))


def select_seed_pair(frames: Sequence[int], affinity: AffinityMatrix) -> Tuple[int, int]:
    """
    Best initial pair of a cluster.

    Raises:
        ValueError: fewer than 2 frames.
    """
    if len(set(frames)) < 2:
        raise ValueError("too-small-cluster: a seed pair needs at least 2 frames")
    return rank_seed_pairs(frames, affinity)[0]


def _parallax_deg(X: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> float:
    r1 = X - c1
    r2 = X - c2
    cos = np.sum(r1 * r2, axis=1) / (np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1))
    return float(np.degrees(np.median(np.arccos(np.clip(cos, -1.0, 1.0)))))


def _unit_baseline(X: np.ndarray, poses: List[CameraPose]) -> Tuple[np.ndarray, List[CameraPose]]:
    baseline = float(np.linalg.norm(poses[1].center - poses[0].center))
    if not np.isfinite(baseline) or baseline <= 0:
        return X, poses
    s = 1.0 / baseline
    return X * s, [p.scaled(s) for p in poses]


def _structure_failure(X: np.ndarray, poses: List[CameraPose]) -> Optional[Tuple[str, str]]:
    """``(reason, detail)`` when the refined structure is unusable, else None."""
    baseline = float(np.linalg.norm(poses[1].center - poses[0].center))
    if not np.all(np.isfinite(X)) or not np.isfinite(baseline) or baseline <= 0:
        return "ba-diverged", "non-finite structure or collapsed seed baseline"
    centred = X - X.mean(axis=0)
    spread = float(np.sqrt(np.mean(np.sum(centred**2, axis=1)))) / baseline
    if spread > MAX_STRUCTURE_SPREAD:
        return "ba-diverged", f"structure spread {spread:.3e} seed baselines"
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[2] <= MIN_STRUCTURE_RANK_RATIO * sv[0]:
        return "degenerate-structure", f"structure singular values {np.array2string(sv)}"
    return None


def _cheirality_failed(depths: np.ndarray) -> bool:
    """Too many observations behind their camera, or a point seen in front by fewer than two."""
    positive = depths > 0
    behind = depths.size - int(np.count_nonzero(positive))
    return behind > MAX_CHEIRALITY_FRACTION * depths.size or bool(np.any(positive.sum(axis=0) < 2))


class ClusterReconstructor:
    """Rigid structure-from-motion for one cluster of frames."""

    def __init__(
        self,
        K: CameraIntrinsics,
        bundle: Optional[BundleConfig] = None,
        rigidity: Optional[RigidityParams] = None,
        max_seed_retries: int = 3,
    ):
        """
        Initialize reconstructor.

        Args:
            K: Shared camera intrinsics.
            bundle: Bundle adjustment settings.
            rigidity: Used to score in-cluster pairs when no affinity is given.
            max_seed_retries: Number of seed pairs tried before giving up.
        """
        self.K = K
        self.bundle = bundle or BundleConfig()
        self.rigidity = rigidity or RigidityParams()
        self.max_seed_retries = max_seed_retries

    def reconstruct_cluster(
        self,
        tracks: TrackSet,
        frames: Iterable[int],
        cluster_id: int = 0,
        affinity: Optional[AffinityMatrix] = None,
    ) -> ClusterReconstruction:
        """
        Reconstruct the shape seen by ``frames``.

        Args:
            tracks: Complete track table.
            frames: Frame ids of the cluster.
            cluster_id: Id recorded on the result.
            affinity: Full N x N affinity (with ``p_h``) or None to score the
                in-cluster pairs here.

        Returns:
            ClusterReconstruction; failures are reported through ``status``
            and ``reason`` rather than raised.
        """
        frames = sorted(set(int(f) for f in frames))
        rec = ClusterReconstruction(cluster_id=cluster_id, frames=frames)
        if len(frames) < 2:
            rec.reason = "too-small-cluster"
            logger.warning("cluster %d: %d frame(s), not reconstructable", cluster_id, len(frames))
            return rec

        if affinity is None:
            affinity = AffinityBuilder(self.rigidity).build_for_frames(tracks, frames)
            lookup = _PairLookup(affinity, frames)
        else:
            lookup = _PairLookup(affinity)

        seed = None
        for i, j in rank_seed_pairs(frames, affinity, lookup)[: self.max_seed_retries]:
            try:
                X, poses = self._initialize(tracks, i, j)
            except SeedInitError as e:
                rec.reason = e.kind
                logger.info("cluster %d: seed (%d, %d) rejected: %s", cluster_id, i, j, e)
                continue
            seed = (i, j)
            break
        if seed is None:
            logger.warning("cluster %d failed: %s", cluster_id, rec.reason)
            return rec

        rec.seed_pair = seed
        rec.reason = None
        registered = [seed[0], seed[1]]
        order = sorted(
            (f for f in frames if f not in seed),
            key=lambda f: (-max(lookup.a(f, seed[0]), lookup.a(f, seed[1])), f),
        )
        converged = True
        gradient_norm = 0.0
        for f in order:
            try:
                pose = pnp(X, tracks.obs[f], self.K)
            except (NRSRError, ValueError, np.linalg.LinAlgError) as e:
                rec.dropped_frames.append((f, getattr(e, "kind", "pnp-failed")))
                logger.warning("cluster %d: frame %d dropped (%s)", cluster_id, f, e)
                continue
            err = reprojection_residuals(X, [pose], tracks.obs[f][None], self.K).mean()
            if not np.isfinite(err) or err > MAX_REGISTER_ERROR_PX:
                rec.dropped_frames.append((f, "pnp-outlier"))
                logger.warning(
                    "cluster %d: frame %d dropped, PnP error %.2f px", cluster_id, f, err
                )
                continue
            registered.append(f)
            poses.append(pose)
            result = bundle_adjust(X, poses, tracks.obs[registered], self.K, self.bundle)
            X, poses = _unit_baseline(result.structure, result.poses)
            converged, gradient_norm = result.converged, result.gradient_norm

        if len(registered) == 2:
            result = bundle_adjust(X, poses, tracks.obs[registered], self.K, self.bundle)
            X, poses = _unit_baseline(result.structure, result.poses)
            converged, gradient_norm = result.converged, result.gradient_norm

        rec.ba_converged = converged
        rec.gradient_norm = gradient_norm
        failure = _structure_failure(X, poses)
        if failure is not None:
            rec.reason, detail = failure
            logger.warning("cluster %d failed: %s", cluster_id, detail)
            return rec

        depths = np.stack([p.transform(X)[:, 2] for p in poses])
        rec.cheirality_violations = int(np.count_nonzero(~(depths > 0)))
        if rec.cheirality_violations:
            logger.warning(
                "cluster %d: %d observation(s) behind their camera",
                cluster_id,
                rec.cheirality_violations,
            )
        residuals = reprojection_residuals(X, poses, tracks.obs[registered], self.K)

        rec.shape = X
        rec.poses = dict(zip(registered, poses))
        rec.residuals = residuals
        rec.frame_errors = {f: float(e) for f, e in zip(registered, residuals.mean(axis=1))}
        rec.mean_reproj_error = float(residuals.mean())
        if _cheirality_failed(depths) or not np.isfinite(rec.mean_reproj_error):
            rec.reason = "cheirality"
            logger.warning(
                "cluster %d failed: %d of %d observations behind their camera",
                cluster_id,
                rec.cheirality_violations,
                depths.size,
            )
            return rec
        rec.status = "success"
        logger.info(
            "cluster %d: %d/%d frames registered, mean reprojection error %.4f px",
            cluster_id,
            len(registered),
            len(frames),
            rec.mean_reproj_error,
        )
        return rec

    def _initialize(self, tracks: TrackSet, i: int, j: int) -> Tuple[np.ndarray, List[CameraPose]]:
        x1, x2 = tracks.obs[i], tracks.obs[j]
        try:
            F = fit_fundamental(x1, x2)
        except GeometryError as e:
            raise SeedInitError("zero-parallax", f"no fundamental matrix: {e}") from e

        E = essential_from_fundamental(F, self.K, self.K)
        first = CameraPose.identity()
        corrs = CorrespondenceSet(x1, x2, (i, j))
        candidates = decompose_essential(E)
        counts = [cheirality_count(first, c, self.K, self.K, corrs) for c in candidates]
        ranked = np.argsort(counts, kind="stable")[::-1]
        best, runner_up = counts[ranked[0]], counts[ranked[1]]
        if best < 0.5 * corrs.size or best == runner_up:
            raise SeedInitError("cheirality-ambiguity", f"cheirality counts {counts}")
        second = candidates[int(ranked[0])]

        X = triangulate_points(first, second, self.K, self.K, x1, x2)
        if not np.all(np.isfinite(X)):
            raise SeedInitError("zero-parallax", "points at infinity")
        parallax = _parallax_deg(X, first.center, second.center)
        if parallax < MIN_PARALLAX_DEG:
            raise SeedInitError("zero-parallax", f"median parallax {parallax:.3f} deg")

        result = bundle_adjust(X, [first, second], tracks.obs[[i, j]], self.K, self.bundle)
        X, poses = _unit_baseline(result.structure, result.poses)
        return X, poses


def select_landmark_pair(reconstructions: Sequence[ClusterReconstruction]) -> Tuple[int, int]:
    """
    Landmark pair with the largest mean diameter-normalized distance across
    successful clusters.
    """
    shapes = [r.shape for r in reconstructions if r.succeeded and r.shape is not None]
    if not shapes:
        raise ValueError("no successful reconstruction to pick landmarks from")
    total = np.zeros((shapes[0].shape[0],) * 2)
    for X in shapes:
        d = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
        total += d / shape_diameter(X)
    upper = np.triu(total / len(shapes), k=1)
    a, b = np.unravel_index(int(np.argmax(upper)), upper.shape)
    return int(a), int(b)


def normalize_scale(
    reconstructions: Sequence[ClusterReconstruction], landmark_pair: LandmarkPair = "auto"
) -> List[ClusterReconstruction]:
    """
    Rescale every successful reconstruction so ``|X_a - X_b| == 1``.

    Failed reconstructions pass through untouched; a cluster where the pair
    has zero length is flagged and left at its own scale.
    """
    if not any(r.succeeded for r in reconstructions):
        raise ValueError("normalize_scale needs at least one successful reconstruction")
    a, b = select_landmark_pair(reconstructions) if landmark_pair == "auto" else landmark_pair
    logger.info("normalizing scale on landmark pair (%d, %d)", a, b)

    out = []
    for rec in reconstructions:
        if not rec.succeeded:
            out.append(rec)
            continue
        length = float(np.linalg.norm(rec.shape[a] - rec.shape[b]))
        if length <= 1e-12 * max(shape_diameter(rec.shape), 1e-300):
            logger.warning(
                "cluster %d: landmarks %d and %d coincide, scale left as is", rec.cluster_id, a, b
            )
            out.append(replace(rec, scale_flagged=True))
            continue
        s = 1.0 / length
        poses: Dict[int, CameraPose] = {f: p.scaled(s) for f, p in rec.poses.items()}
        out.append(replace(rec, shape=rec.shape * s, poses=poses))
    return out
