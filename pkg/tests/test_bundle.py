"""
Tests for bundle adjustment.
"""

import numpy as np
import pytest
from scipy.sparse import issparse
from scipy.spatial.transform import Rotation

from nrsr.analyzers import bundle
from nrsr.analyzers.bundle import BundleProblem, bundle_adjust, left_jacobian, robust_cost
from nrsr.exceptions import UnderconstrainedError
from nrsr.geometry import project_points, rotation_angle
from nrsr.models import BundleConfig, CameraPose
from nrsr.synthetic import look_at


@pytest.fixture
def views(intrinsics, shape):
    """Three exact views of ``shape`` in the identity-first gauge."""
    world = [
        look_at(np.array([0.0, -6.0, 0.5])),
        look_at(np.array([3.0, -5.0, 1.0]), roll=0.2),
        look_at(np.array([-2.5, -5.2, -1.0]), roll=-0.3),
    ]
    first = world[0]
    # re-express everything in the first camera's frame
    X = first.transform(shape)
    poses = [CameraPose(p.R @ first.R.T, p.t - p.R @ first.R.T @ first.t) for p in world]
    obs = np.stack([project_points(p, intrinsics, X) for p in poses])
    return X, poses, obs


def _perturb(X, poses, seed=0, scale=0.02):
    rng = np.random.default_rng(seed)
    moved = [CameraPose(p.R, p.t + scale * rng.normal(size=3)) for p in poses[1:]]
    noisy_poses = [poses[0]] + moved
    return X + scale * rng.normal(size=X.shape), noisy_poses


class TestRobustCost:
    def test_huber_branches(self):
        """Quadratic inside the knee, linear outside, in least_squares' convention."""
        residuals = np.array([1.0, 3.0])
        assert robust_cost(residuals, "huber", 2.0) == pytest.approx(0.5 + 2.0 * (3.0 - 1.0))

    def test_linear(self):
        assert robust_cost(np.array([1.0, 3.0]), "linear", 2.0) == pytest.approx(5.0)


class TestLeftJacobian:
    @pytest.mark.parametrize("rotvec", [[0.0, 0.0, 0.0], [1e-8, 0.0, 0.0], [0.3, -1.2, 0.7]])
    def test_first_order_composition(self, rotvec):
        r = np.array(rotvec)
        d = 1e-7 * np.array([0.4, -0.3, 0.9])
        lhs = Rotation.from_rotvec(r + d).as_matrix()
        rhs = Rotation.from_rotvec(left_jacobian(r) @ d).as_matrix() @ Rotation.from_rotvec(
            r
        ).as_matrix()
        assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestBundleProblem:
    """Tests for residuals and the analytic Jacobian."""

    def test_zero_residual_at_truth(self, views, intrinsics):
        X, poses, obs = views
        problem = BundleProblem(X, poses, obs, intrinsics)
        assert np.max(np.abs(problem.residuals())) < 1e-9

    def test_pack_round_trip(self, views, intrinsics):
        X, poses, obs = views
        problem = BundleProblem(X, poses, obs, intrinsics)
        R, t, Y = problem.unpack(problem.x0.copy())
        assert np.allclose(Y, X)
        assert np.allclose(R, problem.R0, atol=1e-12)
        assert np.allclose(t, problem.t0)

    def test_jacobian_matches_finite_differences(self, views, intrinsics):
        """Analytic and central-difference Jacobians agree to 1e-5 relative."""
        X, poses = _perturb(*views[:2])
        problem = BundleProblem(X, poses, views[2], intrinsics)
        x = problem.x0 + 0.01 * np.random.default_rng(5).normal(size=problem.n_params)
        J = problem.jacobian(x, sparse=False)
        h = 1e-6
        numeric = np.zeros_like(J)
        for k in range(problem.n_params):
            step = np.zeros(problem.n_params)
            step[k] = h
            numeric[:, k] = (problem.residuals(x + step) - problem.residuals(x - step)) / (2 * h)
        assert np.linalg.norm(J - numeric) <= 1e-5 * np.linalg.norm(numeric)

    def test_sparse_and_dense_jacobians_agree(self, views, intrinsics):
        X, poses, obs = views
        problem = BundleProblem(X, poses, obs, intrinsics)
        J = problem.jacobian()
        assert issparse(J)
        assert np.allclose(J.toarray(), problem.jacobian(sparse=False))
        # each observation row touches one camera block and one point
        assert J.getnnz() <= problem.n_residuals * (6 + 3)

    def test_gauge_parameter_count(self, views, intrinsics):
        """Camera 0 is fixed and one translation component of camera 1 is pinned."""
        X, poses, obs = views
        problem = BundleProblem(X, poses, obs, intrinsics)
        assert problem.n_params == 6 * 2 - 1 + 3 * X.shape[0]

    def test_needs_two_poses(self, views, intrinsics):
        X, poses, obs = views
        with pytest.raises(UnderconstrainedError):
            BundleProblem(X, poses[:1], obs[:1], intrinsics)

    def test_observation_shape_checked(self, views, intrinsics):
        X, poses, obs = views
        with pytest.raises(ValueError):
            BundleProblem(X, poses, obs[:2], intrinsics)


class TestBundleAdjust:
    """Tests for bundle_adjust."""

    def test_converges_from_perturbation(self, views, intrinsics):
        X_true, poses_true, obs = views
        X, poses = _perturb(X_true, poses_true)
        result = bundle_adjust(X, poses, obs, intrinsics, BundleConfig())
        problem = BundleProblem(result.structure, result.poses, obs, intrinsics)
        assert np.max(problem.errors()) < 1e-5
        assert result.cost < 1e-10
        assert result.converged

    def test_cost_decreases(self, views, intrinsics):
        X, poses = _perturb(*views[:2], seed=1, scale=0.05)
        result = bundle_adjust(X, poses, views[2], intrinsics, BundleConfig())
        assert result.cost < result.initial_cost
        assert result.evaluations >= 2

    def test_sparse_solver_path(self, views, intrinsics, monkeypatch):
        """Problems above the dense limit solve with a sparse Jacobian."""
        monkeypatch.setattr(bundle, "DENSE_PARAM_LIMIT", 10)
        X_true, poses_true, obs = views
        X, poses = _perturb(X_true, poses_true, seed=5)
        result = bundle_adjust(X, poses, obs, intrinsics, BundleConfig(max_iterations=500))
        assert result.cost < 1e-3 * result.initial_cost

    def test_robust_to_one_outlier(self, views, intrinsics):
        """A grossly wrong observation barely moves the Huber solution."""
        X_true, poses_true, obs = views
        corrupted = obs.copy()
        corrupted[2, 4] += 80.0
        X, poses = _perturb(X_true, poses_true, seed=6)
        result = bundle_adjust(X, poses, corrupted, intrinsics, BundleConfig())
        errors = BundleProblem(result.structure, result.poses, obs, intrinsics).errors()
        assert np.median(errors) < 0.5

    def test_first_camera_fixed(self, views, intrinsics):
        X, poses = _perturb(*views[:2], seed=2)
        result = bundle_adjust(X, poses, views[2], intrinsics, BundleConfig())
        assert np.allclose(result.poses[0].R, np.eye(3))
        assert np.allclose(result.poses[0].t, 0.0)

    def test_pinned_translation_component(self, views, intrinsics):
        X, poses = _perturb(*views[:2], seed=2)
        problem = BundleProblem(X, poses, views[2], intrinsics)
        v, c = problem.fixed_translation
        result = bundle_adjust(X, poses, views[2], intrinsics, BundleConfig())
        assert result.poses[v].t[c] == poses[v].t[c]

    def test_rotations_stay_orthonormal(self, views, intrinsics):
        X, poses = _perturb(*views[:2], seed=3)
        result = bundle_adjust(X, poses, views[2], intrinsics, BundleConfig())
        for pose in result.poses:
            assert np.allclose(pose.R @ pose.R.T, np.eye(3), atol=1e-9)
            assert np.isclose(np.linalg.det(pose.R), 1.0)

    def test_already_optimal(self, views, intrinsics):
        """Exact input converges immediately and is returned unchanged."""
        X, poses, obs = views
        result = bundle_adjust(X, poses, obs, intrinsics, BundleConfig())
        assert result.converged
        assert np.allclose(result.structure, X, atol=1e-9)
        assert rotation_angle(result.poses[1].R, poses[1].R) < 1e-9

    def test_evaluation_cap(self, views, intrinsics):
        X, poses = _perturb(*views[:2], seed=4, scale=0.1)
        result = bundle_adjust(X, poses, views[2], intrinsics, BundleConfig(max_iterations=1))
        assert not result.converged
        assert result.evaluations <= 2

    def test_non_finite_input_returned_unchanged(self, views, intrinsics):
        X, poses, obs = views
        broken = X.copy()
        broken[0] = np.nan
        result = bundle_adjust(broken, poses, obs, intrinsics, BundleConfig())
        assert not result.converged
        assert result.cost == float("inf")
        assert np.isnan(result.structure[0]).all()
