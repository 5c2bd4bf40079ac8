"""
Main analyzer orchestrator.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

from .analyzers import AffinityBuilder, ClusterReconstructor, cluster_views, normalize_scale
from .analyzers.reconstruction import select_landmark_pair
from .config import Config
from .models import (
    AffinityMatrix,
    AnalysisResult,
    CameraIntrinsics,
    ClusterAssignment,
    ClusterReconstruction,
    TrackSet,
)

logger = logging.getLogger(__name__)


def _reconstruct_one(args) -> ClusterReconstruction:
    reconstructor, tracks, frames, cluster_id, affinity = args
    return reconstructor.reconstruct_cluster(tracks, frames, cluster_id, affinity)


class RecurrenceAnalyzer:
    """Main orchestrator: affinity, clustering, reconstruction, scale normalization."""

    def __init__(self, config: Optional[Config] = None):
        """
        Initialize recurrence analyzer.

        Args:
            config: Configuration instance. If None, uses default config.
        """
        self.config = config or Config()
        self.settings = self.config.pipeline_config()
        self.progress = bool(self.config.get("pipeline.progress", False))

    def build_affinity(self, tracks: TrackSet) -> AffinityMatrix:
        builder = AffinityBuilder(self.settings.rigidity, self.settings.workers, self.progress)
        return builder.build(tracks)

    def cluster(self, affinity: AffinityMatrix) -> ClusterAssignment:
        return cluster_views(affinity, self.settings.spectral)

    def reconstruct(
        self,
        tracks: TrackSet,
        assignment: ClusterAssignment,
        intrinsics: CameraIntrinsics,
        affinity: Optional[AffinityMatrix] = None,
    ) -> List[ClusterReconstruction]:
        """
        Reconstruct every cluster, in parallel when ``workers > 1``.

        Results come back ordered by cluster id regardless of scheduling.
        """
        reconstructor = ClusterReconstructor(
            intrinsics,
            self.settings.bundle,
            self.settings.rigidity,
            self.settings.max_seed_retries,
        )
        jobs = [
            (reconstructor, tracks, assignment.members(c), c, affinity) for c in range(assignment.k)
        ]
        if self.settings.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=self.settings.workers) as pool:
                results = list(pool.map(_reconstruct_one, jobs))
        else:
            results = [_reconstruct_one(job) for job in jobs]
        return sorted(results, key=lambda r: r.cluster_id)

    def normalize(self, reconstructions: List[ClusterReconstruction]):
        """Scale-normalize, or pass through when nothing succeeded."""
        if not any(r.succeeded for r in reconstructions):
            logger.warning("no cluster was reconstructed; skipping scale normalization")
            return reconstructions, None
        pair = self.settings.landmark_pair
        if pair == "auto":
            pair = select_landmark_pair(reconstructions)
        return normalize_scale(reconstructions, pair), pair

    def analyze(self, tracks: TrackSet, intrinsics: CameraIntrinsics) -> AnalysisResult:
        """
        Run the complete pipeline on a track table.

        Args:
            tracks: Complete N x M observations.
            intrinsics: Shared camera intrinsics.

        Returns:
            AnalysisResult with per-stage wall times.
        """
        self.settings.spectral.validate_for(tracks.n_frames)
        wall_times = {}

        logger.info("stage 1/3: affinity over %d frames", tracks.n_frames)
        start = time.perf_counter()
        affinity = self.build_affinity(tracks)
        wall_times["affinity"] = time.perf_counter() - start

        logger.info("stage 2/3: clustering into %d groups", self.settings.spectral.k)
        start = time.perf_counter()
        assignment = self.cluster(affinity)
        wall_times["cluster"] = time.perf_counter() - start

        logger.info("stage 3/3: reconstructing clusters")
        start = time.perf_counter()
        reconstructions = self.reconstruct(tracks, assignment, intrinsics, affinity)
        reconstructions, pair = self.normalize(reconstructions)
        wall_times["reconstruct"] = time.perf_counter() - start

        result = AnalysisResult(
            affinity=affinity,
            assignment=assignment,
            reconstructions=reconstructions,
            landmark_pair=pair,
            wall_times=wall_times,
        )
        logger.info(
            "analysis complete: %d/%d clusters reconstructed", result.n_succeeded, assignment.k
        )
        return result
