"""
Non-Rigid Shape Reconstructor (NRSR)

Recovers the 3D shapes of a recurrently deforming object from monocular 2D
feature tracks: frames showing the same shape pass a rigidity test, get
grouped by spectral clustering and are reconstructed with rigid SfM.
"""

__version__ = "0.1.0"
__author__ = "Srijan Kumar"

from .analyzer import RecurrenceAnalyzer
from .analyzers.affinity import AffinityBuilder
from .analyzers.reconstruction import ClusterReconstructor
from .analyzers.rigidity import modified_epipolar_test, naive_epipolar_test
from .analyzers.spectral import cluster_views
from .config import Config
from .evaluation import evaluate, noise_sweep, timing_sweep
from .synthetic import generate_scene

__all__ = [
    "RecurrenceAnalyzer",
    "AffinityBuilder",
    "ClusterReconstructor",
    "modified_epipolar_test",
    "naive_epipolar_test",
    "cluster_views",
    "Config",
    "evaluate",
    "noise_sweep",
    "timing_sweep",
    "generate_scene",
]
