"""
Tests for the pairwise rigidity test.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from nrsr.analyzers.affinity import correspondences_between
from nrsr.analyzers.rigidity import (
    default_thresholds,
    fundamental_score,
    homography_score,
    modified_epipolar_test,
    naive_epipolar_test,
    required_samples,
)
from nrsr.exceptions import InsufficientPointsError, SamplingBudgetError
from nrsr.models import CorrespondenceSet, RigidityParams, SceneConfig
from nrsr.synthetic import generate_scene


@pytest.fixture(scope="module")
def noisy_scene():
    """One rigid shape over six frames with half-pixel noise."""
    return generate_scene(
        SceneConfig(n_frames=6, n_points=20, schedule="rigid", noise_sigma=0.5, rng_seed=4)
    )


class TestSampleCounts:
    """Tests for combinatorics and the sampling-confidence formula."""

    def test_subset_count_for_100_points(self):
        """C(100, 8) is the size of the exhaustive search space."""
        assert math.comb(100, 8) == 186087894300

    @pytest.mark.parametrize("confidence", [0.9, 0.99, 0.999])
    def test_required_samples_is_minimal(self, confidence):
        """K reaches the confidence and K - 1 does not."""
        for e in np.arange(1, 10) / 10.0:
            k = required_samples(float(e), confidence)
            assert 1.0 - (1.0 - e) ** k >= confidence
            if k > 1:
                assert 1.0 - (1.0 - e) ** (k - 1) < confidence

    def test_required_samples_rejects_bad_input(self):
        with pytest.raises(ValueError):
            required_samples(0.0, 0.9)
        with pytest.raises(ValueError):
            required_samples(0.5, 1.0)

    def test_default_thresholds(self):
        """Thresholds follow exp(-M r^2 / sigma^2) with r = 0.75 sigma."""
        tau_f, tau_h = default_thresholds(20, RigidityParams())
        assert np.isclose(tau_f, math.exp(-20 * 0.75**2))
        assert np.isclose(tau_h, math.exp(-20 * 0.75**2))
        explicit = RigidityParams(tau_f=0.5, tau_h=0.25)
        assert default_thresholds(20, explicit) == (0.5, 0.25)


class TestModifiedEpipolarTest:
    """Tests for modified_epipolar_test on noiseless pairs."""

    def test_rigid_pair_scores_positive(self, pair_factory, strict_params):
        score = modified_epipolar_test(pair_factory("rigid", seed=1), strict_params)
        assert score.p > 0
        assert score.is_rigid
        assert score.p_f > 0.99
        assert score.p_h < score.tau_h
        assert score.rejected_reason is None

    def test_zero_baseline_pair_rejected(self, pair_factory, strict_params):
        """A pure rotation has no valid F sample at all."""
        score = modified_epipolar_test(pair_factory("zero-baseline", seed=2), strict_params)
        assert score.p == 0.0
        assert score.p_f == 0.0
        assert score.rejected_reason == "no-valid-fundamental"
        assert score.p_h > score.tau_h

    def test_nonrigid_pair_rejected(self, pair_factory, strict_params):
        score = modified_epipolar_test(pair_factory("nonrigid", seed=3), strict_params)
        assert score.p == 0.0
        assert score.rejected_reason == "fundamental-below-threshold"

    def test_score_is_symmetric(self, pair_factory, strict_params):
        """Swapping the frames keeps a rigid pair rigid."""
        corrs = pair_factory("rigid", seed=4)
        forward = modified_epipolar_test(corrs, strict_params)
        backward = modified_epipolar_test(corrs.swapped(), strict_params)
        assert forward.p > 0 and backward.p > 0

    def test_pixel_scaling_invariance(self, pair_factory, strict_params):
        """Scaling pixels by c with sigma scaled by c keeps the verdict."""
        corrs = pair_factory("rigid", seed=5)
        scaled = replace(strict_params, sigma_f=3.0, sigma_h=6.0)
        assert modified_epipolar_test(corrs.scaled(3.0), scaled).p > 0

    def test_pixel_scaling_invariance_on_noisy_pair(self, noisy_scene):
        """Scores of a noisy pair are unchanged when pixels and kernels scale together."""
        corrs = correspondences_between(noisy_scene.noisy_tracks, 0, 1)
        params = RigidityParams(sigma_f=12.0, sigma_h=24.0)
        scaled = replace(params, sigma_f=36.0, sigma_h=72.0)
        base = modified_epipolar_test(corrs, params)
        other = modified_epipolar_test(corrs.scaled(3.0), scaled)
        assert other.p_f == pytest.approx(base.p_f, abs=1e-9)
        assert other.p_h == pytest.approx(base.p_h, abs=1e-9)
        assert other.p == pytest.approx(base.p, abs=1e-9)
        assert other.log_p_f == pytest.approx(base.log_p_f, rel=1e-9)

    def test_deterministic(self, pair_factory, noisy_params):
        """Same pair and seed give the identical score."""
        corrs = pair_factory("nonrigid", seed=6)
        first = modified_epipolar_test(corrs, noisy_params)
        assert modified_epipolar_test(corrs, noisy_params) == first

    def test_too_few_points(self, pair_factory, strict_params):
        with pytest.raises(InsufficientPointsError):
            modified_epipolar_test(pair_factory("rigid", m=7), strict_params)

    def test_exhaustive_cap(self, pair_factory):
        """Exhaustive mode refuses to enumerate above the cap."""
        params = RigidityParams(sampling_mode="exhaustive", exhaustive_cap=100)
        with pytest.raises(SamplingBudgetError):
            modified_epipolar_test(pair_factory("rigid", m=20), params)

    def test_sample_statistics(self, pair_factory, strict_params):
        score = modified_epipolar_test(pair_factory("rigid", seed=7), strict_params)
        assert score.n_samples_used_f == 200
        assert score.n_samples_used_h == 200
        assert score.log_p_f <= 0.0


class TestRigiditySuite:
    """30-pair noiseless suite: rigid with parallax, zero-baseline and non-rigid."""

    def test_verdicts(self, pair_factory, strict_params):
        for seed in range(10):
            score = {
                kind: modified_epipolar_test(pair_factory(kind, seed=seed), strict_params).p
                for kind in ("rigid", "zero-baseline", "nonrigid")
            }
            assert score["rigid"] > 0
            assert score["zero-baseline"] == 0
            assert score["nonrigid"] == 0

    def test_naive_test_accepts_zero_baseline(self, pair_factory, strict_params):
        """The single-fit test is fooled by homography pairs; the modified test is not."""
        fooled = 0
        for seed in range(10):
            corrs = pair_factory("zero-baseline", seed=seed)
            if naive_epipolar_test(corrs):
                fooled += 1
            assert modified_epipolar_test(corrs, strict_params).p == 0
        assert fooled >= 8


class TestNaiveEpipolarTest:
    """Tests for the single-fit baseline."""

    def test_rigid_pair(self, pair_factory):
        verdict = naive_epipolar_test(pair_factory("rigid", seed=1))
        assert verdict.rigid
        assert verdict.mean_residual < 1e-6

    def test_nonrigid_pair(self, pair_factory):
        assert not naive_epipolar_test(pair_factory("nonrigid", seed=1))

    def test_coincident_points_degenerate(self):
        corrs = CorrespondenceSet(np.ones((10, 2)), np.ones((10, 2)))
        verdict = naive_epipolar_test(corrs)
        assert not verdict.rigid
        assert verdict.degenerate


class TestSamplingModes:
    """Exhaustive and randomized sampling agree."""

    def test_randomized_matches_exhaustive(self, pair_factory):
        base = RigidityParams(aggregation="strict_min", n_samples_f=200, n_samples_h=200)
        exhaustive = replace(base, sampling_mode="exhaustive")
        agree = 0
        for seed in range(20):
            kind = "rigid" if seed % 2 == 0 else "nonrigid"
            corrs = pair_factory(kind, seed=seed, m=10)
            rand = modified_epipolar_test(corrs, base)
            exh = modified_epipolar_test(corrs, exhaustive)
            agree += (rand.p > 0) == (exh.p > 0)
            assert rand.log_p_f >= exh.log_p_f - 1e-9 * max(1.0, abs(exh.log_p_f))
        assert agree >= 19

    def test_exhaustive_counts_every_subset(self, pair_factory):
        params = RigidityParams(sampling_mode="exhaustive")
        corrs = pair_factory("rigid", seed=1, m=10)
        _, stats_f = fundamental_score(corrs, params)
        _, stats_h = homography_score(corrs, params)
        assert stats_f["n_samples_used"] + stats_f["n_degenerate_skipped"] == 45
        assert stats_h["n_samples_used"] + stats_h["n_degenerate_skipped"] == 210

    def test_randomized_subsets_depend_on_pair(self, pair_factory):
        """Different frame ids draw different sample streams."""
        params = RigidityParams(n_samples_f=50)
        corrs = pair_factory("nonrigid", seed=2)
        other = CorrespondenceSet(corrs.x1, corrs.x2, (5, 9))
        _, a = fundamental_score(corrs, params)
        _, b = fundamental_score(other, params)
        assert not np.array_equal(a["sample_log_p"], b["sample_log_p"])

    def test_quantile_is_an_observed_sample(self, pair_factory, noisy_params):
        corrs = pair_factory("nonrigid", seed=3)
        _, stats = fundamental_score(corrs, noisy_params)
        assert stats["log_p"] in stats["sample_log_p"]


class TestNoisyPairs:
    """Half-pixel noise with kernels widened to match."""

    def test_noisy_rigid_pairs_pass(self, noisy_scene):
        params = RigidityParams(sigma_f=12.0, sigma_h=24.0)
        scores = [
            modified_epipolar_test(correspondences_between(noisy_scene.noisy_tracks, 0, j), params)
            for j in range(1, 6)
        ]
        assert sum(score.p > 0 for score in scores) >= 4

    def test_noisy_deformed_pairs_fail(self):
        truth = generate_scene(
            SceneConfig(
                n_frames=6, n_points=20, schedule="periodic", period=2, noise_sigma=0.5, rng_seed=4
            )
        )
        params = RigidityParams(sigma_f=12.0, sigma_h=24.0)
        scores = [
            modified_epipolar_test(correspondences_between(truth.noisy_tracks, i, j), params)
            for i, j in [(0, 1), (0, 3), (0, 5), (2, 3), (4, 1)]
        ]
        assert sum(score.p > 0 for score in scores) <= 1

    def test_low_quantile_rejects_noisy_rigid_pair(self, noisy_scene):
        """Aggregating over the best few samples is too strict once tracks are noisy."""
        corrs = correspondences_between(noisy_scene.noisy_tracks, 0, 1)
        median = modified_epipolar_test(corrs, RigidityParams(sigma_f=12.0, sigma_h=24.0))
        tail = modified_epipolar_test(
            corrs, RigidityParams(sigma_f=12.0, sigma_h=24.0, quantile=0.05)
        )
        assert tail.log_p_f < median.log_p_f
        assert tail.p == 0.0

    def test_default_quantile_is_median(self):
        assert RigidityParams().quantile == 0.5
