"""
Data models for NRSR.

Point lists are numpy arrays: ``(n, 2)`` for image points (pixels) and
``(n, 3)`` for world points.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigError

ORTHONORMAL_TOL = 1e-9


def _as_points(values, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == dim:
        arr = arr.reshape(1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2, unit Frobenius norm fundamental matrix."""

    m: np.ndarray

    def to_dict(self) -> Dict:
        return {"m": self.m.tolist()}


@dataclass(frozen=True)
class Homography:
    """Invertible, unit Frobenius norm plane-to-plane mapping."""

    m: np.ndarray

    def to_dict(self) -> Dict:
        return {"m": self.m.tolist()}


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class CameraPose:
    """
    World-to-camera rigid transform: ``x_cam = R @ X + t``.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHONORMAL_TOL, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points into this camera's frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def scaled(self, s: float) -> "CameraPose":
        return CameraPose(self.R, self.t * s)

    def to_dict(self) -> Dict:
        return {"R": self.R.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class SimilarityTransform:
    """``target ~= s * R @ source + t``."""

    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.s * np.asarray(points, dtype=float) @ self.R.T + self.t

    def to_dict(self) -> Dict:
        return {"s": self.s, "R": self.R.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class CorrespondenceSet:
    """M matched image points between frames ``frame_ids[0]`` and ``frame_ids[1]``."""

    x1: np.ndarray
    x2: np.ndarray
    frame_ids: Tuple[int, int] = (0, 1)

    def __post_init__(self):
        x1 = _as_points(self.x1, 2, "x1")
        x2 = _as_points(self.x2, 2, "x2")
        if x1.shape != x2.shape:
            raise ValueError(f"correspondence arrays differ in shape: {x1.shape} vs {x2.shape}")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    @property
    def size(self) -> int:
        return self.x1.shape[0]

    def __len__(self) -> int:
        return self.size

    def pairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.x1, self.x2))

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.x1[idx], self.x2[idx], self.frame_ids)

    def swapped(self) -> "CorrespondenceSet":
        return CorrespondenceSet(self.x2, self.x1, (self.frame_ids[1], self.frame_ids[0]))

    def scaled(self, c: float) -> "CorrespondenceSet":
        return CorrespondenceSet(self.x1 * c, self.x2 * c, self.frame_ids)


SAMPLING_MODES = ("exhaustive", "randomized")
AGGREGATIONS = ("strict_min", "quantile")


@dataclass(frozen=True)
class RigidityParams:
    """Parameters of the modified epipolar test."""

    sigma_f: float = 1.0
    sigma_h: float = 2.0
    tau_f: Optional[float] = None  # None -> default_thresholds
    tau_h: Optional[float] = None
    r_f: Optional[float] = None  # None -> 0.75 * sigma_f
    r_h: Optional[float] = None  # None -> 0.75 * sigma_h
    sampling_mode: str = "randomized"
    n_samples_f: int = 200
    n_samples_h: int = 200
    rng_seed: int = 0
    aggregation: str = "quantile"
    quantile: float = 0.5
    exhaustive_cap: int = 10**7
    attempt_factor: int = 10
    symmetric_distance: bool = False
    max_distance: float = 1e6
    degeneracy_tol: float = 1e-8

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.sigma_h > 0):
            raise ConfigError("rigidity.sigma_f and rigidity.sigma_h must be > 0")
        for name in ("tau_f", "tau_h"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"rigidity.{name} must lie in [0, 1], got {value}")
        for name in ("r_f", "r_h"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"rigidity.{name} must be >= 0, got {value}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ConfigError(
                f"rigidity.sampling_mode must be one of {SAMPLING_MODES}, "
                f"got {self.sampling_mode!r}"
            )
        if self.n_samples_f < 1 or self.n_samples_h < 1:
            raise ConfigError("rigidity.n_samples_f and rigidity.n_samples_h must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(
                f"rigidity.aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}"
            )
        if self.aggregation == "quantile" and not 0.0 < self.quantile <= 0.5:
            raise ConfigError(f"rigidity.quantile must lie in (0, 0.5], got {self.quantile}")
        if self.attempt_factor < 1 or self.exhaustive_cap < 1:
            raise ConfigError(
                "rigidity.attempt_factor and rigidity.exhaustive_cap must be positive"
            )
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rigidity.rng_seed must be a 64-bit unsigned integer")

    def digest(self) -> str:
        """Stable short hash of every parameter."""
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class RigidityScore:
    """Outcome of the modified epipolar test for one frame pair."""

    p: float
    p_f: float
    p_h: float
    n_samples_used_f: int
    n_samples_used_h: int
    n_degenerate_skipped: int
    tau_f: float = 0.0
    tau_h: float = 1.0
    log_p_f: float = float("-inf")
    log_p_h: float = float("-inf")
    rejected_reason: Optional[str] = None

    @property
    def is_rigid(self) -> bool:
        return self.p > 0.0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class NaiveVerdict:
    """Verdict of the single-fit epipolar baseline."""

    rigid: bool
    mean_residual: float
    degenerate: bool = False

    def __bool__(self) -> bool:
        return self.rigid


@dataclass(frozen=True)
class TrackSet:
    """Complete N-frame x M-point table of image observations."""

    obs: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim != 3 or obs.shape[2] != 2:
            raise ValueError(f"tracks must have shape (N, M, 2), got {obs.shape}")
        if obs.shape[0] < 2:
            raise ValueError(f"tracks need at least 2 frames, got N={obs.shape[0]}")
        if obs.shape[1] < 8:
            raise ValueError(f"tracks need at least 8 points, got M={obs.shape[1]}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("tracks contain non-finite coordinates")
        object.__setattr__(self, "obs", obs)

    @property
    def n_frames(self) -> int:
        return self.obs.shape[0]

    @property
    def n_points(self) -> int:
        return self.obs.shape[1]


@dataclass
class AffinityMatrix:
    """Symmetric N x N matrix of pairwise rigidity probabilities."""

    a: np.ndarray
    params_digest: str = ""
    seed: int = 0
    diagnostics: List[Tuple[int, int, str]] = field(default_factory=list)
    p_h: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def nonzero_fraction(self) -> float:
        n = self.n
        if n < 2:
            return 0.0
        off = self.a[~np.eye(n, dtype=bool)]
        return float(np.count_nonzero(off)) / off.size

    def validate(self) -> None:
        """Re-check symmetry, unit diagonal and range; raise ValueError otherwise."""
        a = self.a
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"affinity must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("affinity is not exactly symmetric")
        if not np.all(np.diag(a) == 1.0):
            raise ValueError("affinity diagonal must be 1")
        if np.any(a < 0.0) or np.any(a > 1.0) or not np.all(np.isfinite(a)):
            raise ValueError("affinity entries must lie in [0, 1]")


@dataclass(frozen=True)
class SpectralConfig:
    """Parameters of normalized-cut view clustering."""

    k: int
    n_eigenvectors: Optional[int] = None  # None -> k
    eigen_tolerance: float = 1e-8
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 300
    rng_seed: int = 0
    log2_embedding: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"spectral.k must be >= 1, got {self.k}")
        if self.n_eigenvectors is not None and self.n_eigenvectors < 1:
            raise ConfigError("spectral.n_eigenvectors must be positive")
        if self.kmeans_restarts < 1 or self.kmeans_max_iters < 1:
            raise ConfigError("spectral.kmeans_restarts and kmeans_max_iters must be positive")
        if not self.eigen_tolerance > 0:
            raise ConfigError("spectral.eigen_tolerance must be > 0")

    def validate_for(self, n: int) -> None:
        if self.k > n:
            raise ConfigError(f"spectral.k={self.k} exceeds the number of frames N={n}")
        if self.n_eigenvectors is not None and self.n_eigenvectors > n:
            raise ConfigError(f"spectral.n_eigenvectors={self.n_eigenvectors} exceeds N={n}")


@dataclass
class ClusterAssignment:
    """Frame-to-cluster labels plus the block-diagonalizing frame order."""

    labels: np.ndarray
    k: int
    permutation: np.ndarray
    rearranged: Optional[np.ndarray] = None
    eigenvalues: Optional[np.ndarray] = None
    empty_clusters: List[int] = field(default_factory=list)
    distortion: float = 0.0

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def members(self, cluster_id: int) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.labels == cluster_id)]

    def to_dict(self) -> Dict:
        return {
            "labels": self.labels.tolist(),
            "k": self.k,
            "permutation": self.permutation.tolist(),
            "empty_clusters": list(self.empty_clusters),
            "distortion": self.distortion,
        }


BUNDLE_LOSSES = ("huber", "linear")


@dataclass(frozen=True)
class BundleConfig:
    """Bundle adjustment settings, passed through to ``scipy.optimize.least_squares``."""

    max_iterations: int = 100  # residual evaluations (max_nfev)
    convergence_tol: float = 1e-10  # relative cost decrease (ftol)
    step_tol: float = 1e-12  # relative parameter change (xtol)
    gradient_tol: float = 1e-10  # gtol
    huber_delta: float = 2.0  # f_scale, pixels
    loss: str = "huber"

    def __post_init__(self):
        for name in ("max_iterations", "convergence_tol", "step_tol", "gradient_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"bundle.{name} must be > 0")
        if not self.huber_delta > 0:
            raise ConfigError("bundle.huber_delta must be > 0")
        if self.loss not in BUNDLE_LOSSES:
            raise ConfigError(f"bundle.loss must be one of {BUNDLE_LOSSES}, got {self.loss!r}")


@dataclass
class ClusterReconstruction:
    """Rigid reconstruction of one cluster's shape state."""

    cluster_id: int
    frames: List[int]
    status: str = "failed"
    reason: Optional[str] = None
    shape: Optional[np.ndarray] = None
    poses: Dict[int, CameraPose] = field(default_factory=dict)
    mean_reproj_error: float = float("inf")
    frame_errors: Dict[int, float] = field(default_factory=dict)
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dropped_frames: List[Tuple[int, str]] = field(default_factory=list)
    seed_pair: Optional[Tuple[int, int]] = None
    cheirality_violations: int = 0
    ba_converged: bool = False
    gradient_norm: float = 0.0
    scale_flagged: bool = False

    @property
    def succeeded(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> Dict:
        return {
            "cluster_id": self.cluster_id,
            "frames": list(self.frames),
            "status": self.status,
            "reason": self.reason,
            "mean_reproj_error": self.mean_reproj_error,
            "seed_pair": list(self.seed_pair) if self.seed_pair else None,
            "dropped_frames": [list(d) for d in self.dropped_frames],
            "cheirality_violations": self.cheirality_violations,
            "ba_converged": self.ba_converged,
            "scale_flagged": self.scale_flagged,
        }


SCHEDULES = ("rigid", "periodic", "recurrent", "nonrecurrent", "folded")
SHAPE_MODELS = ("random-blob", "articulated-chain")
CAMERA_PATHS = ("random-sphere", "orbit", "hopping")


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene generator settings."""

    n_frames: int
    n_points: int
    schedule: str = "periodic"
    period: Optional[int] = None
    states: Optional[Tuple[int, ...]] = None
    n_folds: Optional[int] = None
    shape_model: str = "random-blob"
    n_segments: int = 4
    deformation: float = 0.35
    camera_path: str = "random-sphere"
    radius_range: Tuple[float, float] = (4.0, 6.0)
    n_rig: int = 8
    orbit_elevation_deg: float = 20.0
    intrinsics: CameraIntrinsics = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    image_size: Tuple[int, int] = (640, 480)
    noise_sigma: float = 0.0
    rng_seed: int = 0
    min_state_separation: float = 0.1
    min_parallax_deg: float = 15.0
    max_retries: int = 200

    def __post_init__(self):
        if self.n_frames < 2:
            raise ConfigError(f"scene.n_frames must be >= 2, got {self.n_frames}")
        if self.n_points < 8:
            raise ConfigError(f"scene.n_points must be >= 8, got {self.n_points}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"scene.schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.schedule == "periodic":
            if self.period is None or not 2 <= self.period <= self.n_frames:
                raise ConfigError(
                    f"scene.period must satisfy 2 <= period <= n_frames={self.n_frames}, "
                    f"got {self.period}"
                )
        if self.schedule == "recurrent":
            if self.states is None or len(self.states) != self.n_frames:
                raise ConfigError("scene.states must list one state id per frame")
            ids = sorted(set(int(s) for s in self.states))
            if ids != list(range(len(ids))):
                raise ConfigError("scene.states ids must be 0..S-1 with every id used")
        if self.schedule == "folded":
            if self.n_folds is None or not 1 <= self.n_folds <= self.n_frames:
                raise ConfigError(f"scene.n_folds must lie in [1, n_frames], got {self.n_folds}")
        if self.shape_model not in SHAPE_MODELS:
            raise ConfigError(
                f"scene.shape_model must be one of {SHAPE_MODELS}, got {self.shape_model!r}"
            )
        if self.camera_path not in CAMERA_PATHS:
            raise ConfigError(
                f"scene.camera_path must be one of {CAMERA_PATHS}, got {self.camera_path!r}"
            )
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ConfigError(
                f"scene.radius_range must satisfy 0 < lo <= hi, got {self.radius_range}"
            )
        if self.noise_sigma < 0:
            raise ConfigError("scene.noise_sigma must be >= 0")
        if self.n_segments < 2:
            raise ConfigError("scene.n_segments must be >= 2")
        if self.n_rig < 2:
            raise ConfigError("scene.n_rig must be >= 2")
        if self.max_retries < 1:
            raise ConfigError("scene.max_retries must be positive")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["states"] = list(self.states) if self.states is not None else None
        return data


@dataclass
class SceneGroundTruth:
    """Generated shapes, per-frame states and cameras, clean and noisy tracks."""

    config: SceneConfig
    shapes: np.ndarray  # (S, M, 3)
    state_of_frame: np.ndarray  # (N,)
    poses: List[CameraPose]
    tracks: TrackSet
    noisy_tracks: TrackSet

    @property
    def n_states(self) -> int:
        return self.shapes.shape[0]

    def shape_of_frame(self, frame: int) -> np.ndarray:
        return self.shapes[self.state_of_frame[frame]]


@dataclass
class EvalReport:
    """Quantitative comparison of a pipeline run against ground truth."""

    cluster_rmse: Dict[int, float]
    cluster_state: Dict[int, int]
    success_ratio: float
    purity: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    wall_times: Dict[str, float] = field(default_factory=dict)

    @property
    def n_residuals(self) -> int:
        return int(self.hist_counts.sum())

    @property
    def mean_rmse(self) -> float:
        values = [v for v in self.cluster_rmse.values() if np.isfinite(v)]
        return float(np.mean(values)) if values else float("inf")

    def to_dict(self) -> Dict:
        return {
            "cluster_rmse": {int(k): float(v) for k, v in self.cluster_rmse.items()},
            "cluster_state": {int(k): int(v) for k, v in self.cluster_state.items()},
            "success_ratio": self.success_ratio,
            "purity": self.purity,
            "mean_rmse": self.mean_rmse,
            "hist_edges": self.hist_edges.tolist(),
            "hist_counts": self.hist_counts.tolist(),
            "wall_times": dict(self.wall_times),
        }


LandmarkPair = Union[str, Tuple[int, int]]


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs."""

    tracks_path: Optional[str]
    intrinsics_path: Optional[str]
    output_dir: str
    rigidity: RigidityParams
    spectral: SpectralConfig
    bundle: BundleConfig
    landmark_pair: LandmarkPair = "auto"
    workers: int = 1
    log_level: str = "INFO"
    truth_path: Optional[str] = None
    max_seed_retries: int = 3


@dataclass
class AnalysisResult:
    """Outputs of one end-to-end run: affinity, clusters and shapes."""

    affinity: AffinityMatrix
    assignment: ClusterAssignment
    reconstructions: List[ClusterReconstruction]
    landmark_pair: Optional[Tuple[int, int]] = None
    wall_times: Dict[str, float] = field(default_factory=dict)

    @property
    def n_succeeded(self) -> int:
        return sum(1 for r in self.reconstructions if r.succeeded)

    def summary(self) -> Dict:
        return {
            "n_frames": self.affinity.n,
            "nonzero_fraction": self.affinity.nonzero_fraction(),
            "k": self.assignment.k,
            "clusters_succeeded": self.n_succeeded,
            "landmark_pair": list(self.landmark_pair) if self.landmark_pair else None,
        }
