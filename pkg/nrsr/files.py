"""
Plain-text and PLY file formats.

Floats are written with 17 significant digits so every value survives a
write/read cycle bit-exactly.
"""

import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .exceptions import InputFormatError
from .models import (
    AffinityMatrix,
    CameraIntrinsics,
    CameraPose,
    ClusterAssignment,
    ClusterReconstruction,
    EvalReport,
    SceneConfig,
    SceneGroundTruth,
    TrackSet,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRACKS_FILE = "tracks.txt"
CLEAN_TRACKS_FILE = "tracks_clean.txt"
INTRINSICS_FILE = "intrinsics.txt"
POSES_FILE = "poses.txt"
MANIFEST_FILE = "manifest.txt"
AFFINITY_FILE = "affinity.txt"
DIAGNOSTICS_FILE = "affinity_diagnostics.txt"
CLUSTERS_FILE = "clusters.txt"
CAMERAS_FILE = "cameras.txt"
STATUS_FILE = "status.txt"
RESIDUALS_FILE = "residuals.txt"
REPORT_FILE = "report.txt"
REPORT_JSON_FILE = "report.json"
HISTOGRAM_FILE = "histogram.txt"
TIMINGS_FILE = "timings.txt"

POSE_COLUMNS = "r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2"


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def _header(path: PathLike, lines: List[str], kind: str) -> Dict[str, str]:
    if not lines or not lines[0].startswith(f"# {kind}"):
        raise InputFormatError(f"{path}: missing '# {kind} ...' header")
    return dict(re.findall(r"(\w+)=(\S+)", lines[0]))


def _int_field(path: PathLike, fields: Dict[str, str], key: str) -> int:
    try:
        return int(fields[key])
    except (KeyError, ValueError):
        raise InputFormatError(f"{path}: header field {key}= missing or not an integer")


def _read_lines(path: PathLike) -> List[str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e}") from e
    return [line.strip() for line in text.splitlines() if line.strip()]


def _data_rows(
    path: PathLike, lines: List[str], width: int, sep: Optional[str] = ","
) -> List[List[str]]:
    rows = []
    for n, line in enumerate(lines, start=1):
        if line.startswith("#"):
            continue
        parts = line.split(sep) if sep else line.split()
        if len(parts) != width:
            raise InputFormatError(f"{path}:{n}: expected {width} fields, got {len(parts)}")
        rows.append([p.strip() for p in parts])
    return rows


def write_tracks(path: PathLike, tracks: TrackSet) -> None:
    """``frame,point,x,y`` lines under a ``# tracks N=<N> M=<M>`` header."""
    lines = [f"# tracks N={tracks.n_frames} M={tracks.n_points}"]
    for f in range(tracks.n_frames):
        for p in range(tracks.n_points):
            x, y = tracks.obs[f, p]
            lines.append(f"{f},{p},{fmt(x)},{fmt(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tracks(path: PathLike) -> TrackSet:
    """
    Read a complete track table.

    Raises:
        InputFormatError: bad header, malformed or duplicate lines, missing
            entries, or fewer than 2 frames / 8 points.
    """
    lines = _read_lines(path)
    fields = _header(path, lines, "tracks")
    n, m = _int_field(path, fields, "N"), _int_field(path, fields, "M")
    obs = np.full((n, m, 2), np.nan)
    seen = np.zeros((n, m), dtype=bool)
    for f_s, p_s, x_s, y_s in _data_rows(path, lines, 4):
        try:
            f, p, x, y = int(f_s), int(p_s), float(x_s), float(y_s)
        except ValueError:
            raise InputFormatError(f"{path}: unparsable track line '{f_s},{p_s},{x_s},{y_s}'")
        if not (0 <= f < n and 0 <= p < m):
            raise InputFormatError(f"{path}: entry ({f}, {p}) outside N={n}, M={m}")
        if seen[f, p]:
            raise InputFormatError(f"{path}: duplicate entry for frame {f}, point {p}")
        seen[f, p] = True
        obs[f, p] = (x, y)
    if not seen.all():
        f, p = np.argwhere(~seen)[0]
        raise InputFormatError(
            f"{path}: {int((~seen).sum())} missing entries (first: frame {f}, point {p}); "
            "every point must be visible in every frame"
        )
    try:
        return TrackSet(obs)
    except ValueError as e:
        raise InputFormatError(f"{path}: {e}") from e


def write_intrinsics(path: PathLike, K: CameraIntrinsics) -> None:
    Path(path).write_text(" ".join(fmt(v) for v in (K.fx, K.fy, K.cx, K.cy, K.skew)) + "\n")


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    """Read ``fx fy cx cy [skew]``."""
    values = [v for line in _read_lines(path) if not line.startswith("#") for v in line.split()]
    if len(values) not in (4, 5):
        raise InputFormatError(f"{path}: expected 'fx fy cx cy skew', got {len(values)} values")
    try:
        return CameraIntrinsics(*(float(v) for v in values))
    except ValueError as e:
        raise InputFormatError(f"{path}: {e}") from e


def write_affinity(path: PathLike, affinity: AffinityMatrix) -> None:
    lines = [f"# affinity N={affinity.n} seed={affinity.seed} digest={affinity.params_digest}"]
    lines += [" ".join(fmt(v) for v in row) for row in affinity.a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_affinity(path: PathLike) -> AffinityMatrix:
    """
    Read and re-validate an affinity matrix.

    Raises:
        InputFormatError: bad header, wrong size, asymmetric matrix,
            diagonal other than 1 or entries outside [0, 1].
    """
    lines = _read_lines(path)
    fields = _header(path, lines, "affinity")
    n = _int_field(path, fields, "N")
    try:
        rows = [[float(v) for v in r] for r in _data_rows(path, lines, n, sep=None)]
    except ValueError as e:
        raise InputFormatError(f"{path}: {e}") from e
    if len(rows) != n:
        raise InputFormatError(f"{path}: header says N={n} but found {len(rows)} rows")
    affinity = AffinityMatrix(
        a=np.array(rows, dtype=float).reshape(n, n),
        params_digest=fields.get("digest", ""),
        seed=_int_field(path, fields, "seed") if "seed" in fields else 0,
    )
    try:
        affinity.validate()
    except ValueError as e:
        raise InputFormatError(f"{path}: {e}") from e
    return affinity


def write_diagnostics(path: PathLike, diagnostics: Iterable[Tuple[int, int, str]]) -> None:
    lines = ["# col frame_i frame_j error"] + [f"{i},{j},{kind}" for i, j, kind in diagnostics]
    Path(path).write_text("\n".join(lines) + "\n")


def write_clusters(path: PathLike, assignment: ClusterAssignment, seed: int = 0) -> None:
    lines = [f"# clusters N={assignment.n} K={assignment.k} seed={seed}"]
    lines += [f"{f},{int(c)}" for f, c in enumerate(assignment.labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_clusters(path: PathLike) -> ClusterAssignment:
    lines = _read_lines(path)
    fields = _header(path, lines, "clusters")
    n, k = _int_field(path, fields, "N"), _int_field(path, fields, "K")
    labels = np.full(n, -1, dtype=int)
    for f_s, c_s in _data_rows(path, lines, 2):
        try:
            f, c = int(f_s), int(c_s)
        except ValueError:
            raise InputFormatError(f"{path}: unparsable cluster line '{f_s},{c_s}'")
        if not (0 <= f < n and 0 <= c < k):
            raise InputFormatError(f"{path}: entry ({f}, {c}) outside N={n}, K={k}")
        labels[f] = c
    if np.any(labels < 0):
        missing = np.flatnonzero(labels < 0).tolist()
        raise InputFormatError(f"{path}: frames without a cluster: {missing}")
    return ClusterAssignment(
        labels=labels,
        k=k,
        permutation=np.argsort(labels, kind="stable"),
        empty_clusters=[c for c in range(k) if not np.any(labels == c)],
    )


def write_ply(path: PathLike, points: np.ndarray) -> None:
    """ASCII PLY vertex list."""
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = [" ".join(fmt(v) for v in p) for p in points]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_ply(path: PathLike) -> np.ndarray:
    lines = _read_lines(path)
    try:
        end = lines.index("end_header")
        count = int(next(line.split()[2] for line in lines if line.startswith("element vertex")))
        body = lines[end + 1 : end + 1 + count]
        points = np.array([[float(v) for v in line.split()[:3]] for line in body])
    except (ValueError, StopIteration, IndexError) as e:
        raise InputFormatError(f"{path}: malformed PLY ({e})") from e
    if points.shape != (count, 3):
        raise InputFormatError(f"{path}: expected {count} vertices")
    return points


def _pose_fields(pose: CameraPose) -> List[str]:
    return [fmt(v) for v in pose.R.ravel()] + [fmt(v) for v in pose.t]


def _parse_pose(values: Sequence[str]) -> CameraPose:
    numbers = [float(v) for v in values]
    return CameraPose(np.array(numbers[:9]).reshape(3, 3), np.array(numbers[9:12]))


def shape_filename(cluster_id: int) -> str:
    return f"cluster_{cluster_id:03d}.ply"


def write_reconstructions(
    out_dir: PathLike, reconstructions: Sequence[ClusterReconstruction]
) -> None:
    """
    One PLY per successful cluster plus the cameras, status and residual
    sidecars.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cameras = ["# col frame_id cluster_id " + POSE_COLUMNS + " reproj_error"]
    status = [
        "# col cluster_id status reason n_frames n_registered mean_reproj_error "
        "seed_i seed_j scale_flagged"
    ]
    residuals = ["# col cluster_id frame_id point_id error"]
    for rec in sorted(reconstructions, key=lambda r: r.cluster_id):
        seed_i, seed_j = rec.seed_pair if rec.seed_pair else (-1, -1)
        status.append(
            ",".join(
                [
                    str(rec.cluster_id),
                    rec.status,
                    rec.reason or "",
                    str(len(rec.frames)),
                    str(len(rec.poses)),
                    fmt(rec.mean_reproj_error),
                    str(seed_i),
                    str(seed_j),
                    str(int(rec.scale_flagged)),
                ]
            )
        )
        if not rec.succeeded:
            continue
        write_ply(out / shape_filename(rec.cluster_id), rec.shape)
        for f in sorted(rec.poses):
            fields = [str(f), str(rec.cluster_id)] + _pose_fields(rec.poses[f])
            cameras.append(",".join(fields + [fmt(rec.frame_errors[f])]))
        registered = list(rec.poses)
        for row, f in enumerate(registered):
            for p, err in enumerate(rec.residuals[row]):
                residuals.append(f"{rec.cluster_id},{f},{p},{fmt(err)}")
    (out / CAMERAS_FILE).write_text("\n".join(cameras) + "\n")
    (out / STATUS_FILE).write_text("\n".join(status) + "\n")
    (out / RESIDUALS_FILE).write_text("\n".join(residuals) + "\n")


def read_reconstructions(
    results_dir: PathLike, assignment: ClusterAssignment
) -> List[ClusterReconstruction]:
    """
    Rebuild ClusterReconstruction records written by :func:`write_reconstructions`.

    Raises:
        InputFormatError: missing, truncated or inconsistent result files.
    """
    base = Path(results_dir)
    try:
        return _read_reconstructions(base, assignment)
    except InputFormatError:
        raise
    except (ValueError, KeyError, IndexError) as e:
        raise InputFormatError(f"{base}: malformed results ({type(e).__name__}: {e})") from e


def _read_reconstructions(base: Path, assignment: ClusterAssignment) -> List[ClusterReconstruction]:
    status_path = base / STATUS_FILE
    recs: Dict[int, ClusterReconstruction] = {}
    for row in _data_rows(status_path, _read_lines(status_path), 9):
        cid = int(row[0])
        seed = (int(row[6]), int(row[7]))
        recs[cid] = ClusterReconstruction(
            cluster_id=cid,
            frames=assignment.members(cid),
            status=row[1],
            reason=row[2] or None,
            mean_reproj_error=float(row[5]),
            seed_pair=seed if seed[0] >= 0 else None,
            scale_flagged=bool(int(row[8])),
        )
    cameras_path = base / CAMERAS_FILE
    for row in _data_rows(cameras_path, _read_lines(cameras_path), 15):
        rec = recs[int(row[1])]
        f = int(row[0])
        rec.poses[f] = _parse_pose(row[2:14])
        rec.frame_errors[f] = float(row[14])
    residual_rows: Dict[int, Dict[Tuple[int, int], float]] = {}
    residuals_path = base / RESIDUALS_FILE
    for row in _data_rows(residuals_path, _read_lines(residuals_path), 4):
        residual_rows.setdefault(int(row[0]), {})[(int(row[1]), int(row[2]))] = float(row[3])
    for cid, rec in recs.items():
        if not rec.succeeded:
            continue
        rec.shape = read_ply(base / shape_filename(cid))
        entries = residual_rows.get(cid, {})
        rec.residuals = np.array(
            [[entries[(f, p)] for p in range(rec.shape.shape[0])] for f in rec.poses]
        )
    return [recs[c] for c in sorted(recs)]


def write_scene(out_dir: PathLike, truth: SceneGroundTruth) -> None:
    """
    Scene directory: noisy and clean tracks, intrinsics, poses, one PLY per
    shape state and a ``key=value`` manifest of the generator settings.
    """
    out = Path(out_dir)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    config = truth.config
    write_tracks(out / TRACKS_FILE, truth.noisy_tracks)
    write_tracks(out / CLEAN_TRACKS_FILE, truth.tracks)
    write_intrinsics(out / INTRINSICS_FILE, config.intrinsics)
    poses = ["# col frame_id state_id " + POSE_COLUMNS]
    for f, (pose, state) in enumerate(zip(truth.poses, truth.state_of_frame)):
        poses.append(",".join([str(f), str(int(state))] + _pose_fields(pose)))
    (out / POSES_FILE).write_text("\n".join(poses) + "\n")
    for s, shape in enumerate(truth.shapes):
        write_ply(out / "shapes" / f"state_{s:03d}.ply", shape)

    manifest = {k: v for k, v in config.to_dict().items() if k != "intrinsics"}
    manifest["n_states"] = truth.n_states
    lines = [f"{k}={json.dumps(v)}" for k, v in sorted(manifest.items())]
    (out / MANIFEST_FILE).write_text("\n".join(lines) + "\n")


def read_manifest(path: PathLike) -> Dict[str, object]:
    entries = {}
    for line in _read_lines(path):
        if line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputFormatError(f"{path}: expected key=value, got '{line}'")
        try:
            entries[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise InputFormatError(f"{path}: bad value for {key}: {e}") from e
    return entries


def read_scene(scene_dir: PathLike) -> SceneGroundTruth:
    """Load a directory written by :func:`write_scene`."""
    base = Path(scene_dir)
    manifest = read_manifest(base / MANIFEST_FILE)
    n_states = int(manifest.pop("n_states"))
    for key in ("radius_range", "image_size", "states"):
        if manifest.get(key) is not None:
            manifest[key] = tuple(manifest[key])
    try:
        config = SceneConfig(intrinsics=read_intrinsics(base / INTRINSICS_FILE), **manifest)
    except (TypeError, ValueError) as e:
        raise InputFormatError(f"{base / MANIFEST_FILE}: {e}") from e

    pose_rows = _data_rows(base / POSES_FILE, _read_lines(base / POSES_FILE), 14)
    states = np.array([int(r[1]) for r in pose_rows], dtype=int)
    poses = [_parse_pose(r[2:]) for r in pose_rows]
    shapes = np.stack([read_ply(base / "shapes" / f"state_{s:03d}.ply") for s in range(n_states)])
    return SceneGroundTruth(
        config=config,
        shapes=shapes,
        state_of_frame=states,
        poses=poses,
        tracks=read_tracks(base / CLEAN_TRACKS_FILE),
        noisy_tracks=read_tracks(base / TRACKS_FILE),
    )


def write_report(
    path: PathLike, report: EvalReport, provenance: Optional[Dict[str, object]] = None
) -> None:
    """Key=value summary, provenance (seeds, digests) and a per-cluster table."""
    lines = ["# report"]
    for key, value in sorted((provenance or {}).items()):
        lines.append(f"{key}={value}")
    lines.append(f"purity={fmt(report.purity)}")
    lines.append(f"success_ratio={fmt(report.success_ratio)}")
    lines.append(f"mean_rmse={fmt(report.mean_rmse)}")
    lines.append("# col cluster_id state_id rmse")
    for cid in sorted(report.cluster_rmse):
        lines.append(f"{cid} {report.cluster_state.get(cid, -1)} {fmt(report.cluster_rmse[cid])}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_report_json(
    path: PathLike, report: EvalReport, provenance: Optional[Dict[str, object]] = None
) -> None:
    data = report.to_dict()
    data.pop("wall_times", None)
    data["provenance"] = provenance or {}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def read_report(path: PathLike) -> Dict[str, str]:
    return {
        key: value
        for line in _read_lines(path)
        if not line.startswith("#") and "=" in line
        for key, _, value in [line.partition("=")]
    }


def write_histogram(path: PathLike, report: EvalReport) -> None:
    lines = ["# col bin_lo bin_hi count"]
    edges = report.hist_edges
    for k, count in enumerate(report.hist_counts):
        lines.append(f"{fmt(edges[k])} {fmt(edges[k + 1])} {int(count)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_timings(path: PathLike, wall_times: Dict[str, float]) -> None:
    lines = ["# col stage seconds"] + [f"{k} {v:.6f}" for k, v in wall_times.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_table(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Whitespace-separated table under a ``# col`` header."""
    lines = ["# col " + " ".join(columns)]
    for row in rows:
        lines.append(" ".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
