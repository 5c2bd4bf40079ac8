"""
Synthetic recurrent-deformation scenes with known ground truth.

A scene is a set of shape states (M x 3 point sets), a per-frame state
schedule and one camera per frame; tracks are exact pinhole projections.
"""

import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import GeneratorError
from .geometry import aligned_rmse, project_points, shape_diameter
from .models import CameraPose, SceneConfig, SceneGroundTruth, TrackSet

logger = logging.getLogger(__name__)

MIN_PLANARITY = 0.05
LATERAL_SPREAD = 0.15

SeedLike = Union[int, np.random.SeedSequence]


def state_schedule(config: SceneConfig) -> Tuple[int, np.ndarray]:
    """
    Number of shape states and the state id of every frame.

    ``folded`` sweeps a sequence of ``ceil(N / n_folds)`` states forwards,
    then backwards, and so on.
    """
    n = config.n_frames
    t = np.arange(n)
    if config.schedule == "rigid":
        states = np.zeros(n, dtype=int)
    elif config.schedule == "periodic":
        states = t % config.period
    elif config.schedule == "recurrent":
        states = np.array(config.states, dtype=int)
    elif config.schedule == "nonrecurrent":
        states = t.copy()
    else:
        length = math.ceil(n / config.n_folds)
        offset = t % length
        states = np.where((t // length) % 2 == 0, offset, length - 1 - offset)
    return int(states.max()) + 1, states.astype(int)


def _is_generic(shape: np.ndarray) -> bool:
    sv = np.linalg.svd(shape - shape.mean(axis=0), compute_uv=False)
    return bool(sv[2] > MIN_PLANARITY * sv[0])


def _blob_states(config: SceneConfig, n_states: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(config.max_retries):
        base = rng.normal(size=(config.n_points, 3))
        if _is_generic(base):
            break
    else:
        raise GeneratorError("could not draw a non-planar base shape")
    shapes = [base]
    for _ in range(1, n_states):
        shapes.append(base + config.deformation * rng.normal(size=base.shape))
    return np.stack(shapes)


def _chain_states(config: SceneConfig, n_states: int, rng: np.random.Generator) -> np.ndarray:
    segments = config.n_segments
    seg_of_point = np.arange(config.n_points) * segments // config.n_points
    local = np.column_stack(
        [
            rng.uniform(0.0, 1.0, config.n_points),
            rng.normal(0.0, LATERAL_SPREAD, config.n_points),
            rng.normal(0.0, LATERAL_SPREAD, config.n_points),
        ]
    )
    axes = rng.normal(size=(segments, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    limit = math.pi * config.deformation

    shapes = []
    for _ in range(n_states):
        angles = rng.uniform(-limit, limit, segments)
        joint = np.zeros(3)
        R = np.eye(3)
        points = np.zeros((config.n_points, 3))
        for k in range(segments):
            R = Rotation.from_rotvec(axes[k] * angles[k]).as_matrix() @ R
            mask = seg_of_point == k
            points[mask] = joint + local[mask] @ R.T
            joint = joint + R[:, 0]
        shapes.append(points)
    return np.stack(shapes)


def _separated(shapes: np.ndarray, floor: float) -> bool:
    for a in range(shapes.shape[0]):
        for b in range(a + 1, shapes.shape[0]):
            if aligned_rmse(shapes[a], shapes[b]) < floor * shape_diameter(shapes[b]):
                return False
    return True


def generate_shapes(config: SceneConfig, n_states: int, rng: np.random.Generator) -> np.ndarray:
    """
    ``(S, M, 3)`` generic, mutually separated shape states, each centred at
    the origin. All states share one scale factor so limb lengths persist.

    Raises:
        GeneratorError: constraints not met within ``max_retries``.
    """
    draw = _blob_states if config.shape_model == "random-blob" else _chain_states
    for attempt in range(config.max_retries):
        shapes = draw(config, n_states, rng)
        shapes = shapes - shapes.mean(axis=1, keepdims=True)
        shapes = shapes / np.max(np.linalg.norm(shapes[0], axis=1))
        if not all(_is_generic(s) for s in shapes):
            continue
        if n_states > 1 and not _separated(shapes, config.min_state_separation):
            continue
        logger.debug("shape states accepted after %d attempt(s)", attempt + 1)
        return shapes
    raise GeneratorError(
        f"could not draw {n_states} generic shape states separated by "
        f"{config.min_state_separation} x diameter in {config.max_retries} attempts"
    )


def look_at(
    center: np.ndarray, roll: float = 0.0, target: Optional[np.ndarray] = None
) -> CameraPose:
    """Pose of a camera at ``center`` whose optical axis points at ``target``."""
    z = (np.zeros(3) if target is None else target) - center
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = math.cos(roll), math.sin(roll)
    x, y = c * x + s * y, -s * x + c * y
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


def _visible(pose: CameraPose, shape: np.ndarray, config: SceneConfig) -> bool:
    if np.any(pose.transform(shape)[:, 2] <= 0):
        return False
    uv = project_points(pose, config.intrinsics, shape)
    w, h = config.image_size
    return bool(np.all((uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)))


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(max(-1.0, min(1.0, cos))))


def _far_enough(center: np.ndarray, others: List[np.ndarray], floor: float) -> bool:
    return all(_angle_deg(center, o) >= floor for o in others)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit directions."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z**2)
    phi = math.pi * (1.0 + math.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def generate_cameras(
    config: SceneConfig, shapes: np.ndarray, states: np.ndarray, rng: np.random.Generator
) -> List[CameraPose]:
    """
    One camera per frame, looking at the origin.

    Frames of the same state keep viewing directions at least
    ``min_parallax_deg`` apart and every point must project inside the image.

    Raises:
        GeneratorError: a frame cannot be placed within ``max_retries``.
    """
    lo, hi = config.radius_range
    centers_by_state = {s: [] for s in range(shapes.shape[0])}
    rig = None
    if config.camera_path == "hopping":
        rig = fibonacci_sphere(config.n_rig) * 0.5 * (lo + hi)
    poses = []

    for t, state in enumerate(states):
        shape = shapes[state]
        others = centers_by_state[state]
        if config.camera_path == "orbit":
            phi = 2.0 * math.pi * t / config.n_frames
            el = math.radians(config.orbit_elevation_deg)
            direction = np.array(
                [math.cos(el) * math.cos(phi), math.cos(el) * math.sin(phi), math.sin(el)]
            )
            center = 0.5 * (lo + hi) * direction
            pose = look_at(center)
            if not _far_enough(center, others, config.min_parallax_deg):
                raise GeneratorError(
                    f"orbit frame {t} is closer than scene.min_parallax_deg="
                    f"{config.min_parallax_deg} to an earlier frame of state {state}"
                )
            if not _visible(pose, shape, config):
                raise GeneratorError(f"orbit frame {t} does not see every point inside the image")
        else:
            for _ in range(config.max_retries):
                if rig is not None:
                    center = rig[rng.integers(config.n_rig)]
                else:
                    direction = rng.normal(size=3)
                    center = rng.uniform(lo, hi) * direction / np.linalg.norm(direction)
                pose = look_at(center, roll=rng.uniform(-math.pi, math.pi))
                apart = _far_enough(center, others, config.min_parallax_deg)
                if apart and _visible(pose, shape, config):
                    break
            else:
                raise GeneratorError(
                    f"could not place frame {t} (state {state}) within {config.max_retries} retries"
                )
        others.append(center)
        poses.append(pose)
    return poses


def add_noise(tracks: TrackSet, sigma: float, seed: SeedLike = 0) -> TrackSet:
    """I.i.d. Gaussian pixel noise on every coordinate."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return TrackSet(tracks.obs.copy())
    rng = np.random.default_rng(seed)
    return TrackSet(tracks.obs + rng.normal(0.0, sigma, size=tracks.obs.shape))


def generate_scene(config: SceneConfig) -> SceneGroundTruth:
    """
    Generate shapes, schedule, cameras and tracks for ``config``.

    Identical configs give bit-identical results.
    """
    shape_seq, camera_seq, noise_seq = np.random.SeedSequence(config.rng_seed).spawn(3)
    n_states, states = state_schedule(config)
    shapes = generate_shapes(config, n_states, np.random.default_rng(shape_seq))
    poses = generate_cameras(config, shapes, states, np.random.default_rng(camera_seq))
    obs = np.stack([project_points(p, config.intrinsics, shapes[s]) for p, s in zip(poses, states)])
    tracks = TrackSet(obs)
    logger.info(
        "generated %s scene: N=%d, M=%d, %d state(s)",
        config.schedule,
        config.n_frames,
        config.n_points,
        n_states,
    )
    return SceneGroundTruth(
        config=config,
        shapes=shapes,
        state_of_frame=states,
        poses=poses,
        tracks=tracks,
        noisy_tracks=add_noise(tracks, config.noise_sigma, noise_seq),
    )
