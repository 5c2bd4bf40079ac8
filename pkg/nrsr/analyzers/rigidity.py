"""
Pairwise rigidity testing.

The modified epipolar test scores how likely two frames show the same rigid
shape: fundamental matrices fitted to minimal 8-point samples must explain
every correspondence, while no 4-point homography may explain them (a
homography-related pair has no usable depth and admits a whole family of F).
"""

import itertools
import logging
import math
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

from ..exceptions import (
    InsufficientPointsError,
    NoValidSampleError,
    SamplingBudgetError,
)
from ..geometry import (
    epipolar_distances,
    fit_fundamental_batch,
    fit_homography_batch,
    homography_distances,
)
from ..models import CorrespondenceSet, NaiveVerdict, RigidityParams, RigidityScore

logger = logging.getLogger(__name__)

FUNDAMENTAL_SAMPLE = 8
HOMOGRAPHY_SAMPLE = 4
CHUNK_SIZE = 2048

_MODEL_KEYS = {"fundamental": 0, "homography": 1}


def required_samples(inlier_ratio: float, confidence: float) -> int:
    """
    Smallest K with ``1 - (1 - e)^K >= p``.

    Args:
        inlier_ratio: probability ``e`` that one random sample is valid.
        confidence: wanted probability ``p`` of drawing at least one.

    Returns:
        Number of random samples K.
    """
    if not 0.0 < inlier_ratio < 1.0:
        raise ValueError(f"inlier_ratio must lie in (0, 1), got {inlier_ratio}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")

    def covered(k: int) -> bool:
        return 1.0 - (1.0 - inlier_ratio) ** k >= confidence

    k = max(1, math.ceil(math.log(1.0 - confidence) / math.log(1.0 - inlier_ratio)))
    while not covered(k):
        k += 1
    while k > 1 and covered(k - 1):
        k -= 1
    return k


def default_thresholds(n_points: int, params: RigidityParams) -> Tuple[float, float]:
    """
    Acceptance thresholds ``(tau_f, tau_h)`` scaled to the point count.

    The product of per-point kernels shrinks with M, so each threshold is the
    product an RMS residual of ``r`` would reach: ``exp(-M r^2 / sigma^2)``.
    Explicit ``tau_f``/``tau_h`` in ``params`` take precedence.
    """
    r_f = params.r_f if params.r_f is not None else 0.75 * params.sigma_f
    r_h = params.r_h if params.r_h is not None else 0.75 * params.sigma_h
    tau_f = params.tau_f
    if tau_f is None:
        tau_f = math.exp(-n_points * r_f**2 / params.sigma_f**2)
    tau_h = params.tau_h
    if tau_h is None:
        tau_h = math.exp(-n_points * r_h**2 / params.sigma_h**2)
    return tau_f, tau_h


def _rng(params: RigidityParams, frame_ids: Tuple[int, int], model: str) -> np.random.Generator:
    i, j = (int(f) for f in frame_ids)
    seq = np.random.SeedSequence([params.rng_seed, i, j, _MODEL_KEYS[model]])
    return np.random.default_rng(seq)


def _exhaustive_chunks(m: int, k: int, cap: int) -> Iterator[np.ndarray]:
    total = math.comb(m, k)
    if total > cap:
        raise SamplingBudgetError(
            f"exhaustive mode would enumerate C({m},{k}) = {total} subsets "
            f"(cap {cap}); use randomized sampling"
        )
    combos = itertools.combinations(range(m), k)
    while True:
        chunk = list(itertools.islice(combos, CHUNK_SIZE))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.intp)


def _random_subsets(rng: np.random.Generator, m: int, k: int, count: int) -> np.ndarray:
    keys = rng.random((count, m))
    return np.sort(np.argsort(keys, axis=1)[:, :k], axis=1)


def _score_subsets(
    subsets: np.ndarray,
    corrs: CorrespondenceSet,
    fit: Callable,
    distances: Callable,
    sigma: float,
    tol: float,
) -> Tuple[np.ndarray, int]:
    """Log-probabilities of the valid subsets and the number skipped as degenerate."""
    models, degenerate = fit(corrs.x1[subsets], corrs.x2[subsets], tol)
    valid = models[~degenerate]
    if valid.shape[0] == 0:
        return np.zeros(0), int(degenerate.sum())
    d = distances(valid, corrs.x1, corrs.x2)
    return -np.sum(d**2, axis=1) / sigma**2, int(degenerate.sum())


def _sample_scores(
    corrs: CorrespondenceSet,
    params: RigidityParams,
    model: str,
) -> Tuple[np.ndarray, int]:
    if model == "fundamental":
        k, n_target, sigma = FUNDAMENTAL_SAMPLE, params.n_samples_f, params.sigma_f
        fit = fit_fundamental_batch

        def distances(F, x1, x2):
            return epipolar_distances(F, x1, x2, params.symmetric_distance, params.max_distance)

    else:
        k, n_target, sigma = HOMOGRAPHY_SAMPLE, params.n_samples_h, params.sigma_h
        fit = fit_homography_batch

        def distances(H, x1, x2):
            return homography_distances(H, x1, x2, params.max_distance)

    m = corrs.size
    if m < k:
        raise InsufficientPointsError(f"{model} scoring needs >= {k} correspondences, got {m}")

    scores = []
    skipped = 0
    if params.sampling_mode == "exhaustive":
        for subsets in _exhaustive_chunks(m, k, params.exhaustive_cap):
            chunk_scores, chunk_skipped = _score_subsets(
                subsets, corrs, fit, distances, sigma, params.degeneracy_tol
            )
            scores.append(chunk_scores)
            skipped += chunk_skipped
    else:
        rng = _rng(params, corrs.frame_ids, model)
        budget = params.attempt_factor * n_target
        attempts = valid = 0
        while valid < n_target and attempts < budget:
            count = min(n_target - valid, budget - attempts, CHUNK_SIZE)
            subsets = _random_subsets(rng, m, k, count)
            chunk_scores, chunk_skipped = _score_subsets(
                subsets, corrs, fit, distances, sigma, params.degeneracy_tol
            )
            scores.append(chunk_scores)
            skipped += chunk_skipped
            attempts += count
            valid += chunk_scores.shape[0]

    all_scores = np.concatenate(scores) if scores else np.zeros(0)
    if all_scores.shape[0] == 0:
        raise NoValidSampleError(f"all {skipped} {model} samples were degenerate")
    return all_scores, skipped


def _aggregate(log_scores: np.ndarray, params: RigidityParams) -> float:
    if params.aggregation == "strict_min":
        return float(np.min(log_scores))
    return float(np.quantile(log_scores, params.quantile, method="lower"))


def _score(corrs: CorrespondenceSet, params: RigidityParams, model: str) -> Tuple[float, Dict]:
    log_scores, skipped = _sample_scores(corrs, params, model)
    log_p = _aggregate(log_scores, params)
    stats = {
        "n_samples_used": int(log_scores.shape[0]),
        "n_degenerate_skipped": skipped,
        "log_p": log_p,
        "sample_log_p": log_scores,
    }
    return math.exp(log_p), stats


def fundamental_score(corrs: CorrespondenceSet, params: RigidityParams) -> Tuple[float, Dict]:
    """
    Probability that some fundamental matrix explains every correspondence.

    Each valid 8-point sample k scores ``exp(-sum_i d_F^2 / sigma_f^2)`` over
    all M points (the sample points included), evaluated in log space; the
    scores are aggregated by minimum or by a low quantile.

    Returns:
        ``(p_f, stats)`` where stats holds ``n_samples_used``,
        ``n_degenerate_skipped``, ``log_p`` and the per-sample ``sample_log_p``.

    Raises:
        InsufficientPointsError: M < 8.
        NoValidSampleError: every sample was degenerate.
        SamplingBudgetError: exhaustive enumeration above the cap.
    """
    return _score(corrs, params, "fundamental")


def homography_score(corrs: CorrespondenceSet, params: RigidityParams) -> Tuple[float, Dict]:
    """Same as :func:`fundamental_score` with 4-point homographies and transfer distances."""
    return _score(corrs, params, "homography")


def modified_epipolar_test(corrs: CorrespondenceSet, params: RigidityParams) -> RigidityScore:
    """
    Probability that two frames are rigidly related.

    ``P = P_F * (1 - P_H)`` when ``P_F >= tau_f`` and ``P_H < tau_h``,
    otherwise 0. A pair whose every 8-point sample is degenerate carries no
    fundamental-matrix evidence and scores 0.
    """
    m = corrs.size
    if m < FUNDAMENTAL_SAMPLE:
        raise InsufficientPointsError(f"rigidity test needs >= 8 correspondences, got {m}")
    tau_f, tau_h = default_thresholds(m, params)
    reason: Optional[str] = None

    try:
        p_f, stats_f = fundamental_score(corrs, params)
    except NoValidSampleError as e:
        logger.debug("pair %s: %s", corrs.frame_ids, e)
        p_f, reason = 0.0, "no-valid-fundamental"
        stats_f = {"n_samples_used": 0, "n_degenerate_skipped": 0, "log_p": float("-inf")}

    try:
        p_h, stats_h = homography_score(corrs, params)
    except NoValidSampleError as e:
        logger.debug("pair %s: %s", corrs.frame_ids, e)
        p_h = 0.0
        stats_h = {"n_samples_used": 0, "n_degenerate_skipped": 0, "log_p": float("-inf")}

    if reason is None and p_f < tau_f:
        reason = "fundamental-below-threshold"
    if reason is None and p_h >= tau_h:
        reason = "homography-explained"
    p = p_f * (1.0 - p_h) if reason is None else 0.0

    return RigidityScore(
        p=p,
        p_f=p_f,
        p_h=p_h,
        n_samples_used_f=stats_f["n_samples_used"],
        n_samples_used_h=stats_h["n_samples_used"],
        n_degenerate_skipped=stats_f["n_degenerate_skipped"] + stats_h["n_degenerate_skipped"],
        tau_f=tau_f,
        tau_h=tau_h,
        log_p_f=stats_f["log_p"],
        log_p_h=stats_h["log_p"],
        rejected_reason=reason,
    )


def naive_epipolar_test(corrs: CorrespondenceSet, tolerance: float = 1.0) -> NaiveVerdict:
    """
    Single-fit epipolar check.

    Fits one F to all correspondences with the linear 8-point algorithm and
    calls the pair rigid when the mean point-to-epipolar-line distance is
    below ``tolerance`` pixels. Homography-related pairs pass it, which is
    exactly what the modified test guards against.
    """
    if corrs.size < FUNDAMENTAL_SAMPLE:
        raise InsufficientPointsError(f"naive test needs >= 8 correspondences, got {corrs.size}")
    F, degenerate = fit_fundamental_batch(corrs.x1[None], corrs.x2[None], tol=-1.0)
    if degenerate[0] or not np.all(np.isfinite(F)):
        return NaiveVerdict(rigid=False, mean_residual=float("inf"), degenerate=True)
    mean_residual = float(np.mean(epipolar_distances(F, corrs.x1, corrs.x2)[0]))
    return NaiveVerdict(rigid=mean_residual < tolerance, mean_residual=mean_residual)
