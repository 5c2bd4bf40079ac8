"""
Tests for the on-disk formats.
"""

import numpy as np
import pytest

from nrsr import files
from nrsr.exceptions import InputFormatError
from nrsr.models import (
    AffinityMatrix,
    CameraPose,
    ClusterAssignment,
    ClusterReconstruction,
    TrackSet,
)
from nrsr.synthetic import generate_scene


def _write(path, text):
    path.write_text(text)
    return path


def _track_lines(n, m):
    return [f"{f},{p},{f + 0.5},{p + 0.25}" for f in range(n) for p in range(m)]


class TestTracks:
    """Tests for the track table."""

    def test_values_survive_exactly(self, tmp_path):
        obs = np.random.default_rng(0).uniform(0, 640, size=(3, 9, 2))
        files.write_tracks(tmp_path / "t.txt", TrackSet(obs))
        assert np.array_equal(files.read_tracks(tmp_path / "t.txt").obs, obs)

    def test_line_order_does_not_matter(self, tmp_path):
        lines = _track_lines(2, 8)
        path = _write(tmp_path / "t.txt", "# tracks N=2 M=8\n" + "\n".join(reversed(lines)) + "\n")
        tracks = files.read_tracks(path)
        assert tracks.obs[1, 7].tolist() == [1.5, 7.25]

    def test_missing_entry(self, tmp_path):
        lines = _track_lines(2, 8)[:-1]
        path = _write(tmp_path / "t.txt", "# tracks N=2 M=8\n" + "\n".join(lines))
        with pytest.raises(InputFormatError, match="missing"):
            files.read_tracks(path)

    def test_duplicate_entry(self, tmp_path):
        lines = _track_lines(2, 8) + ["0,0,1,1"]
        path = _write(tmp_path / "t.txt", "# tracks N=2 M=8\n" + "\n".join(lines))
        with pytest.raises(InputFormatError, match="duplicate"):
            files.read_tracks(path)

    def test_out_of_range_entry(self, tmp_path):
        lines = _track_lines(2, 8) + ["5,0,1,1"]
        path = _write(tmp_path / "t.txt", "# tracks N=2 M=8\n" + "\n".join(lines))
        with pytest.raises(InputFormatError):
            files.read_tracks(path)

    def test_too_few_points(self, tmp_path):
        path = _write(tmp_path / "t.txt", "# tracks N=2 M=7\n" + "\n".join(_track_lines(2, 7)))
        with pytest.raises(InputFormatError, match="8 points"):
            files.read_tracks(path)

    @pytest.mark.parametrize(
        "text", ["0,0,1,1\n", "# tracks N=two M=8\n", "# tracks N=2 M=8\n0,0,1\n"]
    )
    def test_malformed(self, tmp_path, text):
        with pytest.raises(InputFormatError):
            files.read_tracks(_write(tmp_path / "t.txt", text))

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(InputFormatError):
            files.read_tracks(tmp_path / "absent.txt")


class TestIntrinsics:
    def test_four_values(self, tmp_path):
        K = files.read_intrinsics(_write(tmp_path / "k.txt", "500 510 320 240\n"))
        assert (K.fx, K.fy, K.cx, K.cy, K.skew) == (500.0, 510.0, 320.0, 240.0, 0.0)

    def test_wrong_count(self, tmp_path):
        with pytest.raises(InputFormatError):
            files.read_intrinsics(_write(tmp_path / "k.txt", "500 320 240\n"))


class TestAffinity:
    """Tests for the affinity file."""

    def test_header_and_values(self, tmp_path):
        a = np.array([[1.0, 0.1], [0.1, 1.0]])
        files.write_affinity(tmp_path / "a.txt", AffinityMatrix(a, params_digest="abc", seed=4))
        affinity = files.read_affinity(tmp_path / "a.txt")
        assert np.array_equal(affinity.a, a)
        assert affinity.seed == 4
        assert affinity.params_digest == "abc"

    @pytest.mark.parametrize(
        "rows",
        [
            "1 0.2\n0.1 1\n",
            "0.9 0.1\n0.1 1\n",
            "1 1.5\n1.5 1\n",
        ],
    )
    def test_invalid_matrix(self, tmp_path, rows):
        """Asymmetry, a non-unit diagonal and out-of-range entries are rejected."""
        path = _write(tmp_path / "a.txt", "# affinity N=2 seed=0 digest=x\n" + rows)
        with pytest.raises(InputFormatError):
            files.read_affinity(path)

    def test_row_count(self, tmp_path):
        path = _write(tmp_path / "a.txt", "# affinity N=2 seed=0 digest=x\n1 0\n")
        with pytest.raises(InputFormatError):
            files.read_affinity(path)

    def test_diagnostics(self, tmp_path):
        files.write_diagnostics(tmp_path / "d.txt", [(0, 4, "insufficient-points")])
        assert (tmp_path / "d.txt").read_text().splitlines()[1] == "0,4,insufficient-points"


class TestClusters:
    def test_assignment(self, tmp_path):
        labels = np.array([0, 1, 0, 2])
        perm = np.argsort(labels, kind="stable")
        assignment = ClusterAssignment(labels=labels, k=4, permutation=perm)
        files.write_clusters(tmp_path / "c.txt", assignment, seed=3)
        loaded = files.read_clusters(tmp_path / "c.txt")
        assert np.array_equal(loaded.labels, labels)
        assert loaded.permutation.tolist() == [0, 2, 1, 3]
        assert loaded.empty_clusters == [3]

    def test_unassigned_frame(self, tmp_path):
        path = _write(tmp_path / "c.txt", "# clusters N=3 K=2 seed=0\n0,0\n2,1\n")
        with pytest.raises(InputFormatError, match="without a cluster"):
            files.read_clusters(path)


class TestReconstructions:
    """Tests for the results directory."""

    def test_written_records_read_back(self, tmp_path, shape):
        pose = CameraPose.identity()
        ok = ClusterReconstruction(
            cluster_id=0,
            frames=[0, 2],
            status="success",
            shape=shape,
            poses={2: pose, 0: pose},
            mean_reproj_error=0.125,
            frame_errors={0: 0.1, 2: 0.15},
            residuals=np.vstack([np.full(20, 0.15), np.full(20, 0.1)]),
            seed_pair=(0, 2),
        )
        failed = ClusterReconstruction(cluster_id=1, frames=[1], reason="too-small-cluster")
        files.write_reconstructions(tmp_path, [failed, ok])
        assert (tmp_path / "cluster_000.ply").exists()
        assert not (tmp_path / "cluster_001.ply").exists()

        labels = np.array([0, 1, 0])
        assignment = ClusterAssignment(labels=labels, k=2, permutation=np.array([0, 2, 1]))
        recs = files.read_reconstructions(tmp_path, assignment)
        assert [r.cluster_id for r in recs] == [0, 1]
        assert np.array_equal(recs[0].shape, shape)
        assert recs[0].seed_pair == (0, 2)
        assert recs[0].frame_errors == {0: 0.1, 2: 0.15}
        assert sorted(recs[0].residuals.ravel().tolist()) == sorted(ok.residuals.ravel().tolist())
        assert recs[1].reason == "too-small-cluster"
        assert recs[1].frames == [1]
        assert not recs[1].succeeded

    def _written(self, tmp_path, shape):
        ok = ClusterReconstruction(
            cluster_id=0,
            frames=[0, 1],
            status="success",
            shape=shape,
            poses={0: CameraPose.identity(), 1: CameraPose.identity()},
            mean_reproj_error=0.1,
            frame_errors={0: 0.1, 1: 0.1},
            residuals=np.full((2, 20), 0.1),
            seed_pair=(0, 1),
        )
        files.write_reconstructions(tmp_path, [ok])
        return ClusterAssignment(labels=np.array([0, 0]), k=1, permutation=np.array([0, 1]))

    def test_non_numeric_status_field(self, tmp_path, shape):
        assignment = self._written(tmp_path, shape)
        status = tmp_path / files.STATUS_FILE
        status.write_text(status.read_text().replace("\n0,", "\nzero,", 1))
        with pytest.raises(InputFormatError, match="malformed results"):
            files.read_reconstructions(tmp_path, assignment)

    def test_camera_of_unknown_cluster(self, tmp_path, shape):
        assignment = self._written(tmp_path, shape)
        cameras = tmp_path / files.CAMERAS_FILE
        row = ",".join(["1", "7"] + ["0"] * 13)
        cameras.write_text(cameras.read_text() + row + "\n")
        with pytest.raises(InputFormatError, match="KeyError"):
            files.read_reconstructions(tmp_path, assignment)

    def test_missing_residual_entry(self, tmp_path, shape):
        assignment = self._written(tmp_path, shape)
        residuals = tmp_path / files.RESIDUALS_FILE
        lines = residuals.read_text().splitlines()
        residuals.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(InputFormatError):
            files.read_reconstructions(tmp_path, assignment)

    def test_malformed_ply(self, tmp_path):
        path = _write(tmp_path / "x.ply", "ply\nelement vertex 2\nend_header\n0 0 0\n")
        with pytest.raises(InputFormatError):
            files.read_ply(path)


class TestScene:
    def test_scene_directory(self, tmp_path, small_scene):
        truth = generate_scene(small_scene)
        files.write_scene(tmp_path, truth)
        loaded = files.read_scene(tmp_path)
        assert loaded.config == truth.config
        assert np.array_equal(loaded.shapes, truth.shapes)
        assert np.array_equal(loaded.state_of_frame, truth.state_of_frame)
        assert np.array_equal(loaded.noisy_tracks.obs, truth.noisy_tracks.obs)

    def test_bad_manifest_line(self, tmp_path):
        with pytest.raises(InputFormatError):
            files.read_manifest(_write(tmp_path / "manifest.txt", "schedule periodic\n"))


class TestTables:
    def test_report_keys(self, tmp_path):
        files.write_table(tmp_path / "t.txt", ["sigma", "rmse"], [(0.5, 0.25), (1.0, 0.125)])
        lines = (tmp_path / "t.txt").read_text().splitlines()
        assert lines == ["# col sigma rmse", "0.5 0.25", "1 0.125"]

    def test_read_report(self, tmp_path):
        text = "# report\nseed=3\npurity=1\n# col cluster_id state_id rmse\n0 0 0\n"
        path = _write(tmp_path / "r.txt", text)
        assert files.read_report(path) == {"seed": "3", "purity": "1"}
