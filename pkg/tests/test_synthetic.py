"""
Tests for the synthetic scene generator.
"""

from dataclasses import replace

import numpy as np
import pytest

from nrsr.exceptions import ConfigError, GeneratorError
from nrsr.geometry import aligned_rmse, shape_diameter
from nrsr.models import SceneConfig, TrackSet
from nrsr.synthetic import add_noise, fibonacci_sphere, generate_scene, state_schedule


def _angle_deg(a, b):
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


class TestStateSchedule:
    """Tests for per-frame state schedules."""

    @pytest.mark.parametrize(
        "kwargs,expected",
        [
            ({"schedule": "rigid"}, [0] * 6),
            ({"schedule": "periodic", "period": 3}, [0, 1, 2, 0, 1, 2]),
            ({"schedule": "nonrecurrent"}, [0, 1, 2, 3, 4, 5]),
            ({"schedule": "recurrent", "states": (0, 1, 0, 2, 1, 0)}, [0, 1, 0, 2, 1, 0]),
            ({"schedule": "folded", "n_folds": 2}, [0, 1, 2, 2, 1, 0]),
        ],
    )
    def test_schedules(self, kwargs, expected):
        n_states, states = state_schedule(SceneConfig(n_frames=6, n_points=10, **kwargs))
        assert states.tolist() == expected
        assert n_states == max(expected) + 1

    def test_folded_with_partial_last_sweep(self):
        config = SceneConfig(n_frames=7, n_points=10, schedule="folded", n_folds=3)
        _, states = state_schedule(config)
        assert states.tolist() == [0, 1, 2, 2, 1, 0, 0]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"schedule": "periodic", "period": 7},
            {"schedule": "periodic"},
            {"schedule": "recurrent", "states": (0, 2, 0, 2, 0, 2)},
            {"schedule": "recurrent", "states": (0, 1)},
            {"schedule": "folded", "n_folds": 0},
            {"schedule": "spiral"},
        ],
    )
    def test_invalid_schedules(self, kwargs):
        with pytest.raises(ConfigError):
            SceneConfig(n_frames=6, n_points=10, **kwargs)

    def test_too_few_points(self):
        with pytest.raises(ConfigError, match="n_points"):
            SceneConfig(n_frames=6, n_points=7, schedule="rigid")


class TestGenerateScene:
    """Tests for generate_scene."""

    def test_deterministic(self, small_scene):
        first = generate_scene(small_scene)
        second = generate_scene(small_scene)
        assert np.array_equal(first.shapes, second.shapes)
        assert np.array_equal(first.tracks.obs, second.tracks.obs)
        assert all(np.array_equal(a.R, b.R) for a, b in zip(first.poses, second.poses))

    def test_seed_matters(self, small_scene):
        other = replace(small_scene, rng_seed=4)
        assert not np.array_equal(generate_scene(small_scene).shapes, generate_scene(other).shapes)

    def test_shapes_are_centered_and_separated(self, small_scene):
        truth = generate_scene(small_scene)
        assert truth.shapes.shape == (4, 20, 3)
        assert np.allclose(truth.shapes.mean(axis=1), 0.0)
        for a in range(4):
            for b in range(a + 1, 4):
                rmse = aligned_rmse(truth.shapes[a], truth.shapes[b])
                assert rmse >= small_scene.min_state_separation * shape_diameter(truth.shapes[b])

    def test_tracks_are_projections_inside_image(self, small_scene):
        truth = generate_scene(small_scene)
        obs = truth.tracks.obs
        assert obs.shape == (12, 20, 2)
        w, h = small_scene.image_size
        assert np.all((obs[..., 0] >= 0) & (obs[..., 0] < w))
        assert np.all((obs[..., 1] >= 0) & (obs[..., 1] < h))
        for t, pose in enumerate(truth.poses):
            assert np.all(pose.transform(truth.shape_of_frame(t))[:, 2] > 0)

    def test_same_state_views_have_parallax(self, small_scene):
        truth = generate_scene(small_scene)
        centers = [p.center for p in truth.poses]
        states = truth.state_of_frame
        for i in range(12):
            for j in range(i + 1, 12):
                if states[i] == states[j]:
                    assert _angle_deg(centers[i], centers[j]) >= small_scene.min_parallax_deg

    def test_noise_applied_to_noisy_tracks_only(self):
        truth = generate_scene(
            SceneConfig(n_frames=4, n_points=10, schedule="rigid", noise_sigma=0.5, rng_seed=2)
        )
        diff = truth.noisy_tracks.obs - truth.tracks.obs
        assert 0.2 < diff.std() < 0.8

    def test_articulated_chain(self):
        config = SceneConfig(
            n_frames=6,
            n_points=24,
            schedule="periodic",
            period=2,
            shape_model="articulated-chain",
            rng_seed=5,
        )
        truth = generate_scene(config)
        assert truth.n_states == 2
        assert truth.shapes.shape == (2, 24, 3)

    def test_orbit_path(self):
        config = SceneConfig(n_frames=8, n_points=12, schedule="rigid", camera_path="orbit")
        truth = generate_scene(config)
        heights = [p.center[2] for p in truth.poses]
        assert np.allclose(heights, heights[0])

    def test_orbit_too_dense_raises(self):
        config = SceneConfig(n_frames=48, n_points=12, schedule="rigid", camera_path="orbit")
        with pytest.raises(GeneratorError):
            generate_scene(config)

    def test_hopping_reuses_rig_positions(self):
        config = SceneConfig(
            n_frames=8, n_points=12, schedule="periodic", period=2, camera_path="hopping"
        )
        truth = generate_scene(config)
        rig = fibonacci_sphere(config.n_rig) * 0.5 * sum(config.radius_range)
        for pose in truth.poses:
            assert np.min(np.linalg.norm(rig - pose.center, axis=1)) < 1e-9

    def test_unreachable_separation_raises(self):
        config = SceneConfig(
            n_frames=4,
            n_points=10,
            schedule="periodic",
            period=2,
            min_state_separation=10.0,
            max_retries=3,
        )
        with pytest.raises(GeneratorError):
            generate_scene(config)


class TestAddNoise:
    def test_zero_sigma_copies(self, small_scene):
        tracks = generate_scene(small_scene).tracks
        noisy = add_noise(tracks, 0.0)
        assert np.array_equal(noisy.obs, tracks.obs)
        assert noisy.obs is not tracks.obs

    def test_seeded(self):
        tracks = TrackSet(np.zeros((3, 8, 2)))
        assert np.array_equal(add_noise(tracks, 1.0, 7).obs, add_noise(tracks, 1.0, 7).obs)
        assert abs(add_noise(TrackSet(np.zeros((50, 40, 2))), 2.0, 1).obs.std() - 2.0) < 0.1

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_noise(TrackSet(np.zeros((2, 8, 2))), -1.0)
