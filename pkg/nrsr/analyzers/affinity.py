"""
Rigidity affinity graph over all frame pairs.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from ..exceptions import NRSRError
from ..models import AffinityMatrix, CorrespondenceSet, RigidityParams, TrackSet
from .rigidity import modified_epipolar_test

logger = logging.getLogger(__name__)

PAIRS_PER_TASK = 16

PairResult = Tuple[int, int, float, float, Optional[str]]


def correspondences_between(tracks: TrackSet, i: int, j: int) -> CorrespondenceSet:
    """Landmark-ordered matches between frames ``i`` and ``j``."""
    return CorrespondenceSet(tracks.obs[i], tracks.obs[j], (i, j))


def _score_pairs(
    obs: np.ndarray, params: RigidityParams, pairs: Sequence[Tuple[int, int]]
) -> List[PairResult]:
    results = []
    for i, j in pairs:
        corrs = CorrespondenceSet(obs[i], obs[j], (i, j))
        try:
            score = modified_epipolar_test(corrs, params)
        except NRSRError as e:
            results.append((i, j, 0.0, 0.0, e.kind))
            continue
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            results.append((i, j, 0.0, 0.0, f"numeric: {e}"))
            continue
        results.append((i, j, score.p, score.p_h, None))
    return results


class AffinityBuilder:
    """Builds the N x N affinity matrix from a TrackSet."""

    def __init__(self, params: RigidityParams, workers: int = 1, progress: bool = False):
        """
        Initialize builder.

        Args:
            params: Rigidity test parameters; ``rng_seed`` seeds every pair.
            workers: Number of worker processes (1 runs in-process).
            progress: Show a tqdm progress bar over pairs.
        """
        self.params = params
        self.workers = max(1, int(workers))
        self.progress = progress

    def build(self, tracks: TrackSet) -> AffinityMatrix:
        """
        Score every unordered frame pair with the modified epipolar test.

        Pairs are enumerated row-major over i < j and each pair draws its own
        random stream, so the result does not depend on ``workers``. A pair
        whose test raises scores 0 and gets a diagnostics entry.
        """
        return self.build_for_frames(tracks, range(tracks.n_frames))

    def build_for_frames(self, tracks: TrackSet, frames: Sequence[int]) -> AffinityMatrix:
        """Affinity restricted to ``frames``; matrix rows follow their order."""
        frames = [int(f) for f in frames]
        n = len(frames)
        pairs = [(frames[a], frames[b]) for a in range(n) for b in range(a + 1, n)]
        position = {f: idx for idx, f in enumerate(frames)}

        a = np.eye(n)
        p_h = np.zeros((n, n))
        diagnostics = []

        logger.info(
            "scoring %d frame pairs (N=%d, M=%d, workers=%d)",
            len(pairs),
            n,
            tracks.n_points,
            self.workers,
        )
        for i, j, p, ph, error in self._run(tracks.obs, pairs):
            ia, ja = position[i], position[j]
            a[ia, ja] = a[ja, ia] = p
            p_h[ia, ja] = p_h[ja, ia] = ph
            if error is not None:
                diagnostics.append((i, j, error))
                logger.warning("pair (%d, %d) failed: %s", i, j, error)

        affinity = AffinityMatrix(
            a=a,
            params_digest=self.params.digest(),
            seed=self.params.rng_seed,
            diagnostics=sorted(diagnostics),
            p_h=p_h,
        )
        logger.info("affinity done: nonzero fraction %.3f", affinity.nonzero_fraction())
        return affinity

    def _run(self, obs: np.ndarray, pairs: List[Tuple[int, int]]):
        chunks = [pairs[k : k + PAIRS_PER_TASK] for k in range(0, len(pairs), PAIRS_PER_TASK)]
        bar = tqdm(total=len(pairs), desc="pairs", unit="pair", disable=not self.progress)
        with logging_redirect_tqdm(), bar:
            if self.workers == 1 or len(chunks) <= 1:
                for chunk in chunks:
                    results = _score_pairs(obs, self.params, chunk)
                    bar.update(len(chunk))
                    yield from results
                return
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(_score_pairs, obs, self.params, chunk) for chunk in chunks]
                for future, chunk in zip(futures, chunks):
                    results = future.result()
                    bar.update(len(chunk))
                    yield from results


def build_affinity(
    tracks: TrackSet, params: RigidityParams, workers: int = 1, progress: bool = False
) -> AffinityMatrix:
    """Functional shortcut for :meth:`AffinityBuilder.build`."""
    return AffinityBuilder(params, workers, progress).build(tracks)
