"""
Projective-geometry primitives.

Minimal solvers come in two flavours: batched (``fit_*_batch``), used by the
rigidity sampler on whole stacks of minimal subsets, and single-sample
wrappers that run the same code on a batch of one.
"""

import logging
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .exceptions import (
    DegenerateConfigurationError,
    DegenerateSampleError,
    UnderconstrainedError,
    ZeroParallaxError,
)
from .models import (
    CameraIntrinsics,
    CameraPose,
    CorrespondenceSet,
    FundamentalMatrix,
    Homography,
    SimilarityTransform,
)

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-8
COLLINEAR_TOL = 1e-6
HOMOGRAPHY_DET_EPS = 1e-15
LINE_EPS = 1e-12
MAX_DISTANCE = 1e6
BASELINE_EPS = 1e-9
SQRT2 = np.sqrt(2.0)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix ``[v]_x``."""
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def homogeneous(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)


def rotation_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic distance between two rotations, in radians."""
    cos = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def _points2(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    return arr


def _normalize_batch(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Hartley conditioning of a stack of point sets.

    Args:
        points: ``(S, n, 2)`` array.

    Returns:
        Normalized points ``(S, n, 2)``, transforms ``(S, 3, 3)`` and a
        boolean mask of sets that were not all coincident.
    """
    centroid = points.mean(axis=1, keepdims=True)
    centered = points - centroid
    mean_dist = np.hypot(centered[..., 0], centered[..., 1]).mean(axis=1)
    extent = np.abs(points).max(axis=(1, 2))
    ok = mean_dist > 1e-12 * np.maximum(1.0, extent)
    scale = np.where(ok, SQRT2 / np.where(ok, mean_dist, 1.0), 1.0)

    S = points.shape[0]
    T = np.zeros((S, 3, 3))
    T[:, 0, 0] = scale
    T[:, 1, 1] = scale
    T[:, 0, 2] = -scale * centroid[:, 0, 0]
    T[:, 1, 2] = -scale * centroid[:, 0, 1]
    T[:, 2, 2] = 1.0
    return centered * scale[:, None, None], T, ok


def normalize_points(points) -> Tuple[np.ndarray, np.ndarray]:
    """
    Translate points to a zero centroid and scale them to mean radius sqrt(2).

    Args:
        points: ``(n, 2)`` pixel coordinates, n >= 2.

    Returns:
        Tuple of normalized points and the 3x3 conditioning transform that
        maps the originals (homogeneous) onto them.

    Raises:
        DegenerateConfigurationError: fewer than two points, or all coincide.
    """
    pts = _points2(points)
    if pts.shape[0] < 2:
        raise DegenerateConfigurationError("normalization needs at least 2 points")
    normed, T, ok = _normalize_batch(pts[None])
    if not ok[0]:
        raise DegenerateConfigurationError("all points coincide")
    return normed[0], T[0]


def _canonical_sign(mats: np.ndarray) -> np.ndarray:
    flat = mats.reshape(mats.shape[0], -1)
    idx = np.argmax(np.abs(flat), axis=1)
    sign = np.sign(flat[np.arange(flat.shape[0]), idx])
    sign[sign == 0] = 1.0
    return mats * sign[:, None, None]


def fit_fundamental_batch(
    x1: np.ndarray, x2: np.ndarray, tol: float = DEGENERACY_TOL
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalized linear 8-point fit on a stack of correspondence sets.

    Args:
        x1: ``(S, n, 2)`` points in the first image, n >= 8.
        x2: ``(S, n, 2)`` matching points in the second image.
        tol: relative singular-value threshold flagging rank-deficient
            design matrices.

    Returns:
        ``(S, 3, 3)`` rank-2, unit-norm fundamental matrices and an
        ``(S,)`` boolean array marking degenerate samples.
    """
    n1, T1, ok1 = _normalize_batch(x1)
    n2, T2, ok2 = _normalize_batch(x2)
    u1, v1 = n1[..., 0], n1[..., 1]
    u2, v2 = n2[..., 0], n2[..., 1]
    A = np.stack(
        [u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, np.ones_like(u1)], axis=-1
    )
    _, s, vt = np.linalg.svd(A)
    degenerate = ~(ok1 & ok2) | (s[:, 7] <= tol * s[:, 0])

    Fn = vt[:, -1, :].reshape(-1, 3, 3)
    U, d, Vt = np.linalg.svd(Fn)
    d[:, 2] = 0.0
    Fn = U @ (d[:, :, None] * Vt)
    F = np.swapaxes(T2, 1, 2) @ Fn @ T1
    F = F / np.linalg.norm(F, axis=(1, 2))[:, None, None]
    return _canonical_sign(F), degenerate


def fit_fundamental(x1, x2, tol: float = DEGENERACY_TOL) -> FundamentalMatrix:
    """Least-squares normalized 8-point fit over n >= 8 correspondences."""
    p1, p2 = _points2(x1), _points2(x2)
    if p1.shape[0] < 8 or p1.shape != p2.shape:
        raise UnderconstrainedError(f"fundamental fit needs >= 8 pairs, got {p1.shape[0]}")
    F, degenerate = fit_fundamental_batch(p1[None], p2[None], tol)
    if degenerate[0]:
        raise DegenerateSampleError("design matrix is rank deficient")
    return FundamentalMatrix(F[0])


def fit_fundamental_8pt(corrs: CorrespondenceSet, tol: float = DEGENERACY_TOL) -> FundamentalMatrix:
    """
    Fit F to exactly 8 correspondences with the linear 8-point algorithm.

    Raises:
        ValueError: not exactly 8 pairs.
        DegenerateSampleError: rank-deficient design matrix.
    """
    if corrs.size != 8:
        raise ValueError(f"8-point fit needs exactly 8 pairs, got {corrs.size}")
    return fit_fundamental(corrs.x1, corrs.x2, tol)


def _triangle_areas(points: np.ndarray) -> np.ndarray:
    """Smallest of the four triangle areas of each 4-point set ``(S, 4, 2)``."""
    areas = []
    for a, b, c in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        ab = points[:, b] - points[:, a]
        ac = points[:, c] - points[:, a]
        areas.append(0.5 * np.abs(ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]))
    return np.min(np.stack(areas, axis=1), axis=1)


def fit_homography_batch(
    x1: np.ndarray, x2: np.ndarray, tol: float = DEGENERACY_TOL
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalized 4-point DLT on a stack of 4-point sets.

    Returns:
        ``(S, 3, 3)`` unit-norm homographies mapping x1 onto x2 and an
        ``(S,)`` boolean array marking degenerate samples (collinear
        triples, rank deficiency, singular H).
    """
    n1, T1, ok1 = _normalize_batch(x1)
    n2, T2, ok2 = _normalize_batch(x2)
    x, y = n1[..., 0], n1[..., 1]
    u, v = n2[..., 0], n2[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    row_u = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    row_v = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    A = np.stack([row_u, row_v], axis=2).reshape(x.shape[0], -1, 9)
    _, s, vt = np.linalg.svd(A)

    degenerate = ~(ok1 & ok2) | (s[:, 7] <= tol * s[:, 0])
    degenerate |= _triangle_areas(n1) <= COLLINEAR_TOL
    degenerate |= _triangle_areas(n2) <= COLLINEAR_TOL

    Hn = vt[:, -1, :].reshape(-1, 3, 3)
    H = np.linalg.solve(T2, Hn @ T1)
    H = H / np.linalg.norm(H, axis=(1, 2))[:, None, None]
    degenerate |= np.abs(np.linalg.det(H)) <= HOMOGRAPHY_DET_EPS
    return _canonical_sign(H), degenerate


def fit_homography_4pt(corrs: CorrespondenceSet, tol: float = DEGENERACY_TOL) -> Homography:
    """
    Fit the homography mapping the 4 first-image points onto the second.

    Raises:
        ValueError: not exactly 4 pairs.
        DegenerateSampleError: a collinear triple in either image.
    """
    if corrs.size != 4:
        raise ValueError(f"homography fit needs exactly 4 pairs, got {corrs.size}")
    H, degenerate = fit_homography_batch(corrs.x1[None], corrs.x2[None], tol)
    if degenerate[0]:
        raise DegenerateSampleError("collinear or rank-deficient 4-point sample")
    return Homography(H[0])


def epipolar_distances(
    F: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    symmetric: bool = False,
    max_distance: float = MAX_DISTANCE,
) -> np.ndarray:
    """
    Point-to-epipolar-line distances for a stack of fundamental matrices.

    Args:
        F: ``(S, 3, 3)``.
        x1, x2: ``(M, 2)`` correspondences.
        symmetric: take the max of d(x2, F x1) and d(x1, F^T x2).
        max_distance: value used where the epipolar line is undefined.

    Returns:
        ``(S, M)`` distances in pixels.
    """
    h1, h2 = homogeneous(x1), homogeneous(x2)
    d = _line_distances(np.einsum("sij,mj->smi", F, h1), h2, max_distance)
    if symmetric:
        back = _line_distances(np.einsum("sji,mj->smi", F, h2), h1, max_distance)
        d = np.maximum(d, back)
    return d


def _line_distances(lines: np.ndarray, points_h: np.ndarray, max_distance: float) -> np.ndarray:
    num = np.abs(np.einsum("smi,mi->sm", lines, points_h))
    den = np.hypot(lines[..., 0], lines[..., 1])
    bad = den <= LINE_EPS * np.linalg.norm(lines, axis=-1)
    return np.where(bad, max_distance, num / np.where(bad, 1.0, den))


def homography_distances(
    H: np.ndarray, x1: np.ndarray, x2: np.ndarray, max_distance: float = MAX_DISTANCE
) -> np.ndarray:
    """Transfer distances ``|x2 - dehomog(H x1)|`` for a stack ``(S, 3, 3)``."""
    p = np.einsum("sij,mj->smi", H, homogeneous(x1))
    w = p[..., 2]
    bad = np.abs(w) <= LINE_EPS * np.linalg.norm(p, axis=-1)
    proj = p[..., :2] / np.where(bad, 1.0, w)[..., None]
    d = np.hypot(proj[..., 0] - x2[:, 0], proj[..., 1] - x2[:, 1])
    return np.where(bad, max_distance, d)


def _scalar_or_array(values: np.ndarray, single: bool) -> Union[float, np.ndarray]:
    return float(values[0]) if single else values


def epipolar_distance(
    F: FundamentalMatrix,
    x,
    x_prime,
    symmetric: bool = False,
    max_distance: float = MAX_DISTANCE,
) -> Union[float, np.ndarray]:
    """
    Distance from ``x_prime`` to the epipolar line ``F x`` in the second image.

    Accepts single points (returns a float) or ``(n, 2)`` arrays.
    """
    single = np.ndim(x) == 1
    d = epipolar_distances(F.m[None], _points2(x), _points2(x_prime), symmetric, max_distance)
    return _scalar_or_array(d[0], single)


def homography_distance(
    H: Homography, x, x_prime, max_distance: float = MAX_DISTANCE
) -> Union[float, np.ndarray]:
    """Euclidean distance between ``x_prime`` and the dehomogenized ``H x``."""
    single = np.ndim(x) == 1
    d = homography_distances(H.m[None], _points2(x), _points2(x_prime), max_distance)
    return _scalar_or_array(d[0], single)


def essential_from_fundamental(
    F: FundamentalMatrix, K1: CameraIntrinsics, K2: CameraIntrinsics
) -> np.ndarray:
    """``E = K2^T F K1`` projected onto singular values (s, s, 0)."""
    E = K2.matrix.T @ F.m @ K1.matrix
    U, s, Vt = np.linalg.svd(E)
    sigma = 0.5 * (s[0] + s[1])
    return U @ np.diag([sigma, sigma, 0.0]) @ Vt


def decompose_essential(E: np.ndarray) -> List[CameraPose]:
    """
    The four (R, +-t) second-camera candidates of an essential matrix,
    with the first camera at identity. ``t`` has unit length.
    """
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [CameraPose(R1, t), CameraPose(R1, -t), CameraPose(R2, t), CameraPose(R2, -t)]


def _check_baseline(pose1: CameraPose, pose2: CameraPose) -> None:
    c1, c2 = pose1.center, pose2.center
    scale = max(1.0, float(np.linalg.norm(c1)), float(np.linalg.norm(c2)))
    if np.linalg.norm(c1 - c2) <= BASELINE_EPS * scale:
        raise ZeroParallaxError("camera centres coincide")


def triangulate_points(
    pose1: CameraPose,
    pose2: CameraPose,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    x1: np.ndarray,
    x2: np.ndarray,
) -> np.ndarray:
    """Homogeneous DLT triangulation of ``(n, 2)`` matches into ``(n, 3)`` points."""
    _check_baseline(pose1, pose2)
    n1 = homogeneous(_points2(x1)) @ K1.inverse.T
    n2 = homogeneous(_points2(x2)) @ K2.inverse.T
    P1 = np.hstack([pose1.R, pose1.t[:, None]])
    P2 = np.hstack([pose2.R, pose2.t[:, None]])
    rows = []
    for n, P in ((n1, P1), (n2, P2)):
        rows.append(n[:, 0:1] * P[2] - n[:, 2:3] * P[0])
        rows.append(n[:, 1:2] * P[2] - n[:, 2:3] * P[1])
    A = np.stack(rows, axis=1)
    _, _, vt = np.linalg.svd(A)
    X = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return X[:, :3] / X[:, 3:4]


def triangulate(
    pose1: CameraPose,
    pose2: CameraPose,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    x1,
    x2,
) -> np.ndarray:
    """
    Triangulate one correspondence.

    Cheirality is not enforced here; a point behind both cameras is still
    returned.

    Raises:
        ZeroParallaxError: the two camera centres coincide.
    """
    return triangulate_points(pose1, pose2, K1, K2, _points2(x1), _points2(x2))[0]


def cheirality_count(
    pose1: CameraPose,
    pose2: CameraPose,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    corrs: CorrespondenceSet,
) -> int:
    """Number of correspondences triangulating in front of both cameras."""
    if corrs.size == 0:
        return 0
    X = triangulate_points(pose1, pose2, K1, K2, corrs.x1, corrs.x2)
    z1 = pose1.transform(X)[:, 2]
    z2 = pose2.transform(X)[:, 2]
    return int(np.count_nonzero(np.isfinite(z1) & np.isfinite(z2) & (z1 > 0) & (z2 > 0)))


def project_points(pose: CameraPose, K: CameraIntrinsics, points3: np.ndarray) -> np.ndarray:
    """Pixel projections ``(n, 2)`` of world points."""
    cam = pose.transform(points3) @ K.matrix.T
    return cam[:, :2] / cam[:, 2:3]


def reprojection_residuals(
    shape: np.ndarray,
    poses: Sequence[CameraPose],
    observations: np.ndarray,
    K: CameraIntrinsics,
) -> np.ndarray:
    """Per-observation reprojection error norms, ``(len(poses), M)``."""
    return np.stack(
        [
            np.linalg.norm(project_points(p, K, shape) - obs, axis=1)
            for p, obs in zip(poses, observations)
        ]
    )


def pnp(points3, points2, K: CameraIntrinsics, tol: float = DEGENERACY_TOL) -> CameraPose:
    """
    Camera pose from 3D-2D matches.

    Linear DLT on conditioned coordinates, polar projection of the rotation
    block onto SO(3), then Levenberg-Marquardt refinement of the pixel
    reprojection error.

    Raises:
        UnderconstrainedError: fewer than 6 points, coplanar points or a
            rank-deficient DLT system.
    """
    X = np.asarray(points3, dtype=float).reshape(-1, 3)
    x = _points2(points2)
    n = X.shape[0]
    if n < 6 or x.shape[0] != n:
        raise UnderconstrainedError(f"PnP needs >= 6 matched points, got {n}")

    mean3 = X.mean(axis=0)
    centered = X - mean3
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= 1e-9 * sv[0]:
        raise UnderconstrainedError("PnP points are coplanar")
    scale3 = np.sqrt(3.0) / np.linalg.norm(centered, axis=1).mean()
    T3 = np.diag([scale3, scale3, scale3, 1.0])
    T3[:3, 3] = -scale3 * mean3

    xn = (homogeneous(x) @ K.inverse.T)[:, :2]
    xnn, T2 = normalize_points(xn)
    Xh = homogeneous(centered * scale3)
    zeros = np.zeros_like(Xh)
    A = np.concatenate(
        [
            np.hstack([Xh, zeros, -xnn[:, 0:1] * Xh]),
            np.hstack([zeros, Xh, -xnn[:, 1:2] * Xh]),
        ]
    )
    _, s, vt = np.linalg.svd(A)
    if s[10] <= tol * s[0]:
        raise UnderconstrainedError("PnP design matrix is rank deficient")
    P = np.linalg.solve(T2, vt[-1].reshape(3, 4) @ T3)
    if np.linalg.det(P[:, :3]) < 0:
        P = -P
    U, sing, Vt = np.linalg.svd(P[:, :3])
    R0 = U @ Vt
    t0 = P[:, 3] / sing.mean()

    def residuals(params: np.ndarray) -> np.ndarray:
        R = Rotation.from_rotvec(params[:3]).as_matrix()
        cam = (X @ R.T + params[3:]) @ K.matrix.T
        return (cam[:, :2] / cam[:, 2:3] - x).ravel()

    x0 = np.concatenate([Rotation.from_matrix(R0).as_rotvec(), t0])
    result = least_squares(residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    params = result.x if np.all(np.isfinite(result.x)) else x0
    logger.debug("pnp refined in %d evaluations, cost %.3e", result.nfev, result.cost)
    return CameraPose(Rotation.from_rotvec(params[:3]).as_matrix(), params[3:])


def procrustes_similarity(source, target) -> SimilarityTransform:
    """
    Least-squares similarity ``target ~= s R source + t`` (Umeyama).

    Raises:
        DegenerateConfigurationError: fewer than 3 points or a collinear source.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    tgt = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise ValueError(f"point sets differ in shape: {src.shape} vs {tgt.shape}")
    if src.shape[0] < 3:
        raise DegenerateConfigurationError("alignment needs at least 3 points")

    mu_s, mu_t = src.mean(axis=0), tgt.mean(axis=0)
    A, B = src - mu_s, tgt - mu_t
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("source points are collinear")

    n = src.shape[0]
    U, D, Vt = np.linalg.svd(B.T @ A / n)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    s = float(np.sum(D * S) / (np.sum(A**2) / n))
    t = mu_t - s * R @ mu_s
    return SimilarityTransform(s, R, t)


def aligned_rmse(source, target) -> float:
    """RMS point distance after similarity-aligning ``source`` onto ``target``."""
    sim = procrustes_similarity(source, target)
    diff = sim.apply(source) - np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def shape_diameter(points: np.ndarray) -> float:
    """Largest pairwise distance of a point set."""
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))
