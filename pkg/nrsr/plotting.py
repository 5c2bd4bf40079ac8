"""
Optional matplotlib figures.

matplotlib is imported on first use with the Agg backend so the package
works without a display and without the ``plot`` extra installed.
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from .models import AffinityMatrix, ClusterAssignment, EvalReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _pyplot():
    try:
        import matplotlib as mpl
    except ImportError as e:
        raise ImportError("plots need matplotlib: pip install 'nrsr[plot]'") from e
    mpl.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: PathLike) -> None:
    fig.tight_layout()
    fig.savefig(str(path), dpi=150)
    fig.clf()
    logger.info("wrote figure %s", path)


def plot_affinity(affinity: AffinityMatrix, assignment: ClusterAssignment, path: PathLike) -> None:
    """Affinity matrix before and after reordering by cluster, with a membership strip."""
    plt = _pyplot()
    fig, axes = plt.subplots(
        1, 3, figsize=(11, 5), gridspec_kw={"width_ratios": [10, 10, 1]}
    )
    axes[0].imshow(affinity.a, cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
    axes[0].set_title("affinity")
    rearranged = assignment.rearranged
    if rearranged is None:
        perm = assignment.permutation
        rearranged = affinity.a[np.ix_(perm, perm)]
    axes[1].imshow(rearranged, cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
    axes[1].set_title(f"rearranged (K={assignment.k})")
    strip = assignment.labels[assignment.permutation][:, None]
    axes[2].imshow(strip, cmap="tab20", aspect="auto", interpolation="nearest")
    axes[2].set_xticks([])
    axes[2].set_title("cluster")
    _save(fig, path)
    plt.close(fig)


def plot_histogram(report: EvalReport, path: PathLike) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = np.asarray(report.hist_edges)
    ax.bar(edges[:-1], report.hist_counts, width=np.diff(edges), align="edge", edgecolor="black")
    ax.set_xlabel("reprojection error (px)")
    ax.set_ylabel("observations")
    _save(fig, path)
    plt.close(fig)


def plot_noise_sweep(rows: Sequence[Dict[str, float]], path: PathLike) -> None:
    """Mean shape RMSE and success ratio against pixel noise."""
    plt = _pyplot()
    sigmas = [r["sigma"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sigmas, [r["mean_rmse"] for r in rows], "o-", label="mean RMSE / diameter")
    ax.set_xlabel("noise sigma (px)")
    ax.set_ylabel("RMSE")
    twin = ax.twinx()
    ratios = [r["success_ratio"] for r in rows]
    twin.plot(sigmas, ratios, "s--", color="tab:orange", label="success ratio")
    twin.set_ylim(0.0, 1.05)
    twin.set_ylabel("success ratio")
    fig.legend(loc="upper center")
    _save(fig, path)
    plt.close(fig)


def plot_timing(rows: Sequence[Tuple[int, float]], slope: float, axis: str, path: PathLike) -> None:
    plt = _pyplot()
    values = np.array([r[0] for r in rows], dtype=float)
    seconds = np.array([r[1] for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(values, seconds, "o-")
    ax.set_xlabel(axis)
    ax.set_ylabel("affinity wall time (s)")
    ax.set_title(f"log-log slope {slope:.2f}")
    _save(fig, path)
    plt.close(fig)
