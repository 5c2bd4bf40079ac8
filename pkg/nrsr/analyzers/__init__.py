"""
Analyzers module for NRSR.

Contains the pipeline stages: rigidity testing, affinity construction,
spectral clustering, bundle adjustment and per-cluster reconstruction.
"""

from .affinity import AffinityBuilder, build_affinity, correspondences_between
from .bundle import BundleProblem, BundleResult, bundle_adjust
from .reconstruction import ClusterReconstructor, normalize_scale, select_seed_pair
from .rigidity import (
    default_thresholds,
    fundamental_score,
    homography_score,
    modified_epipolar_test,
    naive_epipolar_test,
    required_samples,
)
from .spectral import cluster_views, eigengap_report, kmeans, normalized_laplacian, spectral_embed

__all__ = [
    "AffinityBuilder",
    "build_affinity",
    "correspondences_between",
    "BundleProblem",
    "BundleResult",
    "bundle_adjust",
    "ClusterReconstructor",
    "normalize_scale",
    "select_seed_pair",
    "default_thresholds",
    "fundamental_score",
    "homography_score",
    "modified_epipolar_test",
    "naive_epipolar_test",
    "required_samples",
    "cluster_views",
    "eigengap_report",
    "kmeans",
    "normalized_laplacian",
    "spectral_embed",
]
