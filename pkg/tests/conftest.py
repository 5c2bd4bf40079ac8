"""
Shared fixtures: intrinsics, point sets and two-view pair factories.
"""

import numpy as np
import pytest

from nrsr.geometry import project_points
from nrsr.models import CameraIntrinsics, CorrespondenceSet, RigidityParams, SceneConfig
from nrsr.synthetic import look_at

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _direction(rng, base, angle_deg):
    """Unit vector at ``angle_deg`` from ``base``."""
    base = _unit(base)
    perp = _unit(np.cross(base, rng.normal(size=3)))
    a = np.radians(angle_deg)
    return np.cos(a) * base + np.sin(a) * perp


def make_pair(kind: str, seed: int = 0, m: int = 20) -> CorrespondenceSet:
    """
    Noiseless two-view correspondences.

    ``rigid``: same shape, camera centres 30 degrees apart.
    ``zero-baseline``: same shape, same centre, camera rotated.
    ``nonrigid``: deformed shape in the second view, 30 degrees apart.
    """
    rng = np.random.default_rng(seed)
    X = 0.5 * rng.normal(size=(m, 3))
    base = rng.normal(size=3)
    c1 = 6.0 * _unit(base)
    pose1 = look_at(c1, roll=rng.uniform(-np.pi, np.pi))
    X2 = X
    if kind == "zero-baseline":
        pose2 = look_at(c1, roll=rng.uniform(-np.pi, np.pi), target=0.3 * rng.normal(size=3))
    else:
        pose2 = look_at(6.0 * _direction(rng, base, 30.0), roll=rng.uniform(-np.pi, np.pi))
        if kind == "nonrigid":
            X2 = X + 0.3 * rng.normal(size=X.shape)
    x1, x2 = project_points(pose1, K, X), project_points(pose2, K, X2)
    return CorrespondenceSet(x1, x2, (0, seed + 1))


@pytest.fixture
def intrinsics():
    return K


@pytest.fixture
def pair_factory():
    return make_pair


@pytest.fixture
def strict_params():
    """Noiseless settings: every sample must explain every point."""
    return RigidityParams(aggregation="strict_min", n_samples_f=200, n_samples_h=200)


@pytest.fixture
def noisy_params():
    """Wide kernels for half-pixel noise."""
    return RigidityParams(sigma_f=10.0, sigma_h=10.0, aggregation="quantile", quantile=0.5)


@pytest.fixture
def small_scene():
    """Periodic scene with 4 states over 12 frames."""
    return SceneConfig(n_frames=12, n_points=20, schedule="periodic", period=4, rng_seed=3)


@pytest.fixture
def shape(intrinsics):
    rng = np.random.default_rng(42)
    return 0.5 * rng.normal(size=(20, 3))
