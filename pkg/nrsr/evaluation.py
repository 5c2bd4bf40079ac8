"""
Quantitative evaluation against synthetic ground truth, plus noise and
timing sweeps.
"""

import copy
import logging
import time
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from .analyzer import RecurrenceAnalyzer
from .analyzers import AffinityBuilder
from .config import Config
from .exceptions import DegenerateConfigurationError, InputFormatError
from .geometry import aligned_rmse, shape_diameter
from .models import (
    ClusterAssignment,
    ClusterReconstruction,
    EvalReport,
    RigidityParams,
    SceneConfig,
    SceneGroundTruth,
)
from .synthetic import generate_scene

logger = logging.getLogger(__name__)

TIMING_AXES = ("samples", "points", "frames")

Labels = Union[ClusterAssignment, Sequence[int], np.ndarray]


def _labels(assign: Labels) -> np.ndarray:
    return np.asarray(assign.labels if isinstance(assign, ClusterAssignment) else assign, dtype=int)


def clustering_purity(assign: Labels, truth: Sequence[int]) -> float:
    """Sum over clusters of the majority-state count, divided by N."""
    labels = _labels(assign)
    states = np.asarray(truth, dtype=int)
    if labels.shape != states.shape:
        raise InputFormatError(
            f"assignment has {labels.shape[0]} frames, truth has {states.shape[0]}"
        )
    if labels.size == 0:
        return 0.0
    total = 0
    for c in np.unique(labels):
        total += int(np.bincount(states[labels == c]).max())
    return total / labels.size


def majority_state(frames: Sequence[int], states: np.ndarray) -> int:
    """Most frequent ground-truth state among ``frames``, lowest id on ties."""
    return int(np.argmax(np.bincount(states[list(frames)])))


def _normalized_rmse(shape: np.ndarray, target: np.ndarray, cluster_id: int) -> float:
    if not np.all(np.isfinite(shape)):
        logger.warning("cluster %d has non-finite structure", cluster_id)
        return float("inf")
    try:
        rmse = aligned_rmse(shape, target) / shape_diameter(target)
    except DegenerateConfigurationError as e:
        logger.warning("cluster %d cannot be aligned to ground truth: %s", cluster_id, e)
        return float("inf")
    return rmse if np.isfinite(rmse) else float("inf")


def evaluate(
    reconstructions: Sequence[ClusterReconstruction],
    assign: Labels,
    truth: SceneGroundTruth,
    success_noise_factor: float = 5.0,
    success_offset_px: float = 1.0,
    hist_bins: int = 20,
    hist_max_px: Optional[float] = None,
    wall_times: Optional[Dict[str, float]] = None,
) -> EvalReport:
    """
    Compare a pipeline run with ground truth.

    Shape RMSE is measured after similarity alignment to the cluster's
    majority state and divided by that state's diameter. A cluster counts as
    successful when it reconstructed and its mean reprojection error stays
    below ``success_noise_factor * noise_sigma + success_offset_px``; the
    success ratio is the fraction of frames assigned to such clusters.
    A shape that cannot be aligned (collinear or non-finite) scores an
    infinite RMSE.

    Raises:
        InputFormatError: frame counts of assignment and truth differ.
    """
    states = truth.state_of_frame
    n = states.shape[0]
    labels = _labels(assign)
    if labels.shape[0] != n:
        raise InputFormatError(f"assignment has {labels.shape[0]} frames, truth has N={n}")

    threshold = success_noise_factor * truth.config.noise_sigma + success_offset_px
    cluster_rmse: Dict[int, float] = {}
    cluster_state: Dict[int, int] = {}
    residuals = []
    succeeded_frames = 0
    for rec in reconstructions:
        if not rec.frames:
            continue
        state = majority_state(rec.frames, states)
        cluster_state[rec.cluster_id] = state
        if not rec.succeeded or rec.shape is None:
            cluster_rmse[rec.cluster_id] = float("inf")
            continue
        target = truth.shapes[state]
        cluster_rmse[rec.cluster_id] = _normalized_rmse(rec.shape, target, rec.cluster_id)
        residuals.append(np.asarray(rec.residuals, dtype=float).ravel())
        if rec.mean_reproj_error <= threshold:
            succeeded_frames += len(rec.frames)

    values = np.concatenate(residuals) if residuals else np.zeros(0)
    if hist_max_px is not None:
        upper = hist_max_px
    else:
        upper = float(values.max()) if values.size else 1.0
    upper = max(upper, 1e-12)
    counts, edges = np.histogram(np.minimum(values, upper), bins=hist_bins, range=(0.0, upper))

    return EvalReport(
        cluster_rmse=cluster_rmse,
        cluster_state=cluster_state,
        success_ratio=succeeded_frames / n,
        purity=clustering_purity(labels, states),
        hist_edges=edges,
        hist_counts=counts,
        wall_times=dict(wall_times or {}),
    )


def _sweep_config(
    config: Config, sigma: float, n_states: int, kernel_scale: Optional[float]
) -> Config:
    swept = copy.deepcopy(config)
    swept.set("spectral.k", n_states)
    if kernel_scale is not None and sigma > 0:
        swept.set("rigidity.sigma_f", max(config.get("rigidity.sigma_f"), kernel_scale * sigma))
        sigma_h = max(config.get("rigidity.sigma_h"), 2.0 * kernel_scale * sigma)
        swept.set("rigidity.sigma_h", sigma_h)
    return swept


def noise_sweep(
    scene: SceneConfig,
    sigmas: Sequence[float],
    config: Optional[Config] = None,
    seeds: Sequence[int] = (0, 1, 2),
    kernel_scale: Optional[float] = 16.0,
) -> List[Dict[str, float]]:
    """
    Run the full pipeline once per (sigma, seed) and average per sigma.

    Cluster count follows the scene's number of states. With
    ``kernel_scale`` set, the rigidity kernels widen to at least
    ``kernel_scale * sigma`` (and twice that for homographies). Minimal
    8-point fits on noisy tracks leave residuals of several sigma.

    Returns:
        One row per sigma: ``sigma``, ``mean_rmse``, ``success_ratio``,
        ``purity``, ``runs``.
    """
    config = config or Config(load_dotenv_file=False)
    rows = []
    with logging_redirect_tqdm():
        quiet = not config.get("pipeline.progress", False)
        for sigma in tqdm(sigmas, desc="noise sweep", disable=quiet):
            rmses, ratios, purities = [], [], []
            for seed in seeds:
                truth = generate_scene(replace(scene, noise_sigma=float(sigma), rng_seed=int(seed)))
                run_config = _sweep_config(config, float(sigma), truth.n_states, kernel_scale)
                run_config.set("pipeline.seed", int(seed))
                analyzer = RecurrenceAnalyzer(run_config)
                result = analyzer.analyze(truth.noisy_tracks, scene.intrinsics)
                report = evaluate(result.reconstructions, result.assignment, truth)
                rmses.append(report.mean_rmse)
                ratios.append(report.success_ratio)
                purities.append(report.purity)
            finite = [r for r in rmses if np.isfinite(r)]
            row = {
                "sigma": float(sigma),
                "mean_rmse": float(np.mean(finite)) if finite else float("inf"),
                "success_ratio": float(np.mean(ratios)),
                "purity": float(np.mean(purities)),
                "runs": len(seeds),
            }
            logger.info(
                "noise sweep sigma=%.3g: rmse %.4g, success %.3f",
                sigma,
                row["mean_rmse"],
                row["success_ratio"],
            )
            rows.append(row)
    return rows


def log_log_slope(values: Sequence[float], seconds: Sequence[float]) -> float:
    """Least-squares slope of log(seconds) against log(value)."""
    return float(np.polyfit(np.log(values), np.log(seconds), 1)[0])


def timing_sweep(
    axis: str,
    values: Sequence[int],
    scene: SceneConfig,
    params: RigidityParams,
    repeats: int = 1,
) -> Tuple[List[Tuple[int, float]], float]:
    """
    Single-worker wall time of the affinity stage along one axis.

    Args:
        axis: ``samples`` (n_samples_f and n_samples_h), ``points`` (M) or
            ``frames`` (N).
        values: Axis values to time.
        scene: Base scene; the axis value overrides its M or N.
        params: Base rigidity parameters.
        repeats: Best-of repeats per value.

    Returns:
        ``[(value, seconds)]`` rows and the fitted log-log slope.
    """
    if axis not in TIMING_AXES:
        raise ValueError(f"timing axis must be one of {TIMING_AXES}, got {axis!r}")
    rows = []
    for value in values:
        run_scene, run_params = scene, params
        if axis == "samples":
            run_params = replace(params, n_samples_f=int(value), n_samples_h=int(value))
        elif axis == "points":
            run_scene = replace(scene, n_points=int(value))
        else:
            run_scene = replace(scene, n_frames=int(value))
        tracks = generate_scene(run_scene).noisy_tracks
        builder = AffinityBuilder(run_params, workers=1)
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            builder.build(tracks)
            best = min(best, time.perf_counter() - start)
        logger.info("timing %s=%d: %.3f s", axis, value, best)
        rows.append((int(value), best))
    slope = log_log_slope([r[0] for r in rows], [r[1] for r in rows])
    return rows, slope
