"""
Tests for per-cluster rigid reconstruction and scale normalization.
"""

import numpy as np
import pytest

from nrsr.analyzers import reconstruction
from nrsr.analyzers.bundle import BundleResult
from nrsr.analyzers.reconstruction import (
    ClusterReconstructor,
    _cheirality_failed,
    normalize_scale,
    rank_seed_pairs,
    select_landmark_pair,
    select_seed_pair,
)
from nrsr.geometry import aligned_rmse, shape_diameter
from nrsr.models import (
    AffinityMatrix,
    ClusterReconstruction,
    RigidityParams,
    SceneConfig,
    TrackSet,
)
from nrsr.synthetic import generate_scene


@pytest.fixture(scope="module")
def rigid_scene():
    return generate_scene(SceneConfig(n_frames=6, n_points=20, schedule="rigid", rng_seed=1))


@pytest.fixture
def reconstructor(intrinsics):
    rigidity = RigidityParams(aggregation="strict_min", n_samples_f=100, n_samples_h=100)
    return ClusterReconstructor(intrinsics, rigidity=rigidity)


def _success(cluster_id, shape):
    return ClusterReconstruction(
        cluster_id=cluster_id, frames=[0, 1], status="success", shape=shape
    )


class TestSeedSelection:
    def test_ranking_prefers_high_affinity_low_homography(self):
        a = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, 0.5], [0.9, 0.5, 1.0]])
        p_h = np.array([[1.0, 0.8, 0.0], [0.8, 1.0, 0.0], [0.0, 0.0, 1.0]])
        affinity = AffinityMatrix(a, p_h=p_h)
        assert rank_seed_pairs([0, 1, 2], affinity) == [(0, 2), (1, 2), (0, 1)]
        assert select_seed_pair([2, 0, 1], affinity) == (0, 2)

    def test_ties_broken_by_smaller_pair(self):
        affinity = AffinityMatrix(np.ones((3, 3)))
        assert select_seed_pair([0, 1, 2], affinity) == (0, 1)

    def test_single_frame_has_no_seed(self):
        with pytest.raises(ValueError, match="too-small-cluster"):
            select_seed_pair([4], AffinityMatrix(np.eye(5)))


class TestClusterReconstructor:
    """Tests for ClusterReconstructor on noiseless rigid data."""

    def test_recovers_shape_up_to_similarity(self, rigid_scene, reconstructor):
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, range(6), cluster_id=2)
        assert rec.succeeded
        assert rec.cluster_id == 2
        assert sorted(rec.poses) == list(range(6))
        truth = rigid_scene.shapes[0]
        assert aligned_rmse(rec.shape, truth) / shape_diameter(truth) < 1e-6
        assert rec.mean_reproj_error < 1e-4
        assert rec.cheirality_violations == 0

    def test_unit_seed_baseline(self, rigid_scene, reconstructor):
        """The seed cameras sit one unit apart with the first at the origin."""
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, range(6))
        i, j = rec.seed_pair
        assert np.allclose(rec.poses[i].R, np.eye(3), atol=1e-9)
        assert np.linalg.norm(rec.poses[j].center - rec.poses[i].center) == pytest.approx(1.0)

    def test_two_frame_cluster(self, rigid_scene, reconstructor):
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [1, 4])
        assert rec.succeeded
        assert rec.residuals.shape == (2, 20)

    def test_uses_given_affinity(self, rigid_scene, reconstructor):
        """With a full affinity the seed is the best-ranked pair."""
        n = rigid_scene.tracks.n_frames
        a = np.full((n, n), 0.2)
        a[2, 5] = a[5, 2] = 0.9
        np.fill_diagonal(a, 1.0)
        tracks = rigid_scene.tracks
        rec = reconstructor.reconstruct_cluster(tracks, range(n), affinity=AffinityMatrix(a))
        assert rec.seed_pair == (2, 5)

    def test_single_frame_cluster_fails(self, rigid_scene, reconstructor):
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [3])
        assert not rec.succeeded
        assert rec.reason == "too-small-cluster"
        assert rec.shape is None

    def test_identical_frames_fail_with_zero_parallax(self, rigid_scene, reconstructor):
        tracks = TrackSet(rigid_scene.tracks.obs[[2, 2]])
        rec = reconstructor.reconstruct_cluster(tracks, [0, 1])
        assert not rec.succeeded
        assert rec.reason == "zero-parallax"


def _patched_bundle(monkeypatch, reshape):
    """Replace bundle adjustment by a pass-through that reshapes the structure."""

    def fake(structure, poses, observations, K, config, fixed_translation=None):
        return BundleResult(
            structure=reshape(np.array(structure, dtype=float)),
            poses=list(poses),
            cost=0.0,
            converged=True,
        )

    monkeypatch.setattr(reconstruction, "bundle_adjust", fake)


class TestStructureGates:
    """Refined structures that must not be reported as successes."""

    def test_collinear_structure(self, rigid_scene, reconstructor, monkeypatch):
        def collapse(X):
            return np.outer(X[:, 2], [0.1, 0.2, 1.0])

        _patched_bundle(monkeypatch, collapse)
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [0, 1])
        assert not rec.succeeded
        assert rec.reason == "degenerate-structure"
        assert rec.shape is None

    def test_exploding_structure(self, rigid_scene, reconstructor, monkeypatch):
        _patched_bundle(monkeypatch, lambda X: 1e6 * X)
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [0, 1])
        assert not rec.succeeded
        assert rec.reason == "ba-diverged"

    def test_non_finite_structure(self, rigid_scene, reconstructor, monkeypatch):
        def poison(X):
            X[0] = np.nan
            return X

        _patched_bundle(monkeypatch, poison)
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [0, 1])
        assert not rec.succeeded
        assert rec.reason == "ba-diverged"

    def test_points_behind_first_camera(self, rigid_scene, reconstructor, monkeypatch):
        def flip(X):
            X[:4, 2] = -np.abs(X[:4, 2])
            return X

        _patched_bundle(monkeypatch, flip)
        rec = reconstructor.reconstruct_cluster(rigid_scene.tracks, [0, 1])
        assert not rec.succeeded
        assert rec.reason == "cheirality"
        assert rec.cheirality_violations >= 4

    def test_cheirality_fraction(self):
        depths = np.ones((6, 20))
        depths[0, :2] = -1.0
        assert not _cheirality_failed(depths)
        depths[1, 2:9] = -1.0
        assert _cheirality_failed(depths)

    def test_point_in_front_of_one_view(self):
        depths = np.ones((6, 20))
        depths[1:, 0] = -1.0
        assert _cheirality_failed(depths)


class TestScaleNormalization:
    """Tests for landmark-pair scale normalization."""

    def test_landmark_pair_is_farthest(self, shape):
        a, b = select_landmark_pair([_success(0, shape), _success(1, 2.0 * shape)])
        d = np.linalg.norm(shape[:, None] - shape[None, :], axis=-1)
        assert d[a, b] == pytest.approx(d.max())
        assert a < b

    def test_pair_has_unit_length(self, shape):
        recs = [_success(0, shape), _success(1, 3.0 * shape)]
        out = normalize_scale(recs, (0, 1))
        for rec in out:
            assert np.linalg.norm(rec.shape[0] - rec.shape[1]) == pytest.approx(1.0)
        assert np.allclose(out[0].shape, out[1].shape)

    def test_auto_pair(self, shape):
        out = normalize_scale([_success(0, 5.0 * shape)])
        a, b = select_landmark_pair(out)
        assert np.linalg.norm(out[0].shape[a] - out[0].shape[b]) == pytest.approx(1.0)

    def test_failed_reconstruction_untouched(self, shape):
        failed = ClusterReconstruction(cluster_id=1, frames=[3], reason="too-small-cluster")
        out = normalize_scale([_success(0, shape), failed], (0, 1))
        assert out[1] is failed

    def test_coincident_landmarks_flagged(self, shape):
        collapsed = shape.copy()
        collapsed[1] = collapsed[0]
        out = normalize_scale([_success(0, shape), _success(1, collapsed)], (0, 1))
        assert not out[0].scale_flagged
        assert out[1].scale_flagged
        assert np.array_equal(out[1].shape, collapsed)

    def test_requires_a_success(self):
        with pytest.raises(ValueError):
            normalize_scale([ClusterReconstruction(cluster_id=0, frames=[])])
