"""
Bundle adjustment on scipy's trust-region least squares.

Cameras are parameterized by absolute rotation vectors and translations,
points by their coordinates. The first camera is held fixed and one
translation component of the second camera is pinned, which removes the
similarity gauge. The Jacobian is analytic and block sparse.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial.transform import Rotation

from ..exceptions import UnderconstrainedError
from ..geometry import skew
from ..models import BundleConfig, CameraIntrinsics, CameraPose

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-12
DENSE_PARAM_LIMIT = 2000  # larger problems switch to the sparse LSMR solver


@dataclass
class BundleResult:
    """Refined structure and poses plus optimizer statistics."""

    structure: np.ndarray
    poses: List[CameraPose]
    cost: float
    initial_cost: float = 0.0
    evaluations: int = 0
    converged: bool = False
    gradient_norm: float = 0.0
    message: str = ""


def left_jacobian(rotvec: np.ndarray) -> np.ndarray:
    """
    Left Jacobian of SO(3): ``exp([r + d]_x) ~= exp([J d]_x) exp([r]_x)``.
    """
    theta = float(np.linalg.norm(rotvec))
    W = skew(rotvec)
    if theta < 1e-6:
        a, b = 0.5 - theta**2 / 24.0, 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * W @ W


def robust_cost(residuals: np.ndarray, loss: str, f_scale: float) -> float:
    """
    Cost in the convention of ``least_squares``: ``0.5 * C^2 * sum(rho(f^2 / C^2))``.

    Huber's ``rho`` is ``z`` up to 1 and ``2 sqrt(z) - 1`` beyond.
    """
    z = (np.asarray(residuals, dtype=float) / f_scale) ** 2
    if loss == "huber":
        z = np.where(z <= 1.0, z, 2.0 * np.sqrt(z) - 1.0)
    return 0.5 * f_scale**2 * float(np.sum(z))


class BundleProblem:
    """
    Reprojection problem over V cameras and M points with complete visibility.

    Args:
        structure: ``(M, 3)`` initial points.
        poses: V initial poses; ``poses[0]`` stays fixed.
        observations: ``(V, M, 2)`` pixel observations.
        K: shared intrinsics.
        fixed_translation: ``(camera, component)`` held fixed, or None for the
            largest-magnitude translation component of camera 1.
    """

    def __init__(
        self,
        structure: np.ndarray,
        poses: Sequence[CameraPose],
        observations: np.ndarray,
        K: CameraIntrinsics,
        fixed_translation: Optional[Tuple[int, int]] = None,
    ):
        if len(poses) < 2:
            raise UnderconstrainedError("bundle adjustment needs at least 2 poses")
        self.X0 = np.array(structure, dtype=float)
        self.R0 = np.stack([p.R for p in poses])
        self.t0 = np.stack([p.t for p in poses]).astype(float)
        self.obs = np.asarray(observations, dtype=float)
        if self.obs.shape != (len(poses), self.X0.shape[0], 2):
            raise ValueError(
                f"observations must have shape {(len(poses), self.X0.shape[0], 2)}, "
                f"got {self.obs.shape}"
            )
        self.K = K
        if fixed_translation is None:
            fixed_translation = (1, int(np.argmax(np.abs(self.t0[1] - self.t0[0]))))
        self.fixed_translation = fixed_translation
        self._layout()
        self.x0 = self.pack(self.R0, self.t0, self.X0)

    def _layout(self):
        V, M = self.R0.shape[0], self.X0.shape[0]
        self.camera_columns = {}
        col = 0
        for v in range(1, V):
            comps = [c for c in range(3) if (v, c) != self.fixed_translation]
            self.camera_columns[v] = (col, comps)
            col += 3 + len(comps)
        self.point_column = col
        self.n_params = col + 3 * M

    @property
    def n_residuals(self) -> int:
        return self.obs.size

    def pack(self, R: np.ndarray, t: np.ndarray, X: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n_params)
        for v, (col, comps) in self.camera_columns.items():
            x[col : col + 3] = Rotation.from_matrix(R[v]).as_rotvec()
            x[col + 3 : col + 3 + len(comps)] = t[v, comps]
        x[self.point_column :] = X.ravel()
        return x

    def unpack(self, x: Optional[np.ndarray] = None):
        """``(R, t, X)`` at parameter vector ``x`` (the initial state when None)."""
        if x is None:
            return self.R0, self.t0, self.X0
        R = self.R0.copy()
        t = self.t0.copy()
        for v, (col, comps) in self.camera_columns.items():
            R[v] = Rotation.from_rotvec(x[col : col + 3]).as_matrix()
            t[v, comps] = x[col + 3 : col + 3 + len(comps)]
        return R, t, x[self.point_column :].reshape(-1, 3)

    def _project(self, Xc: np.ndarray) -> np.ndarray:
        z = np.where(np.abs(Xc[..., 2]) < MIN_DEPTH, MIN_DEPTH, Xc[..., 2])
        K = self.K
        u = (K.fx * Xc[..., 0] + K.skew * Xc[..., 1]) / z + K.cx
        v = K.fy * Xc[..., 1] / z + K.cy
        return np.stack([u, v], axis=-1)

    def residuals(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Flat residual vector ``proj - obs``."""
        R, t, X = self.unpack(x)
        Xc = np.einsum("vij,mj->vmi", R, X) + t[:, None, :]
        return (self._project(Xc) - self.obs).ravel()

    def errors(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-observation reprojection error norms ``(V, M)``."""
        return np.linalg.norm(self.residuals(x).reshape(self.obs.shape), axis=-1)

    def jacobian(self, x: Optional[np.ndarray] = None, sparse: bool = True):
        """Analytic Jacobian of :meth:`residuals`, CSR unless ``sparse`` is False."""
        if x is None:
            x = self.x0
        R, t, X = self.unpack(x)
        V, M = R.shape[0], X.shape[0]
        RX = np.einsum("vij,mj->vmi", R, X)
        Xc = RX + t[:, None, :]
        px, py = Xc[..., 0], Xc[..., 1]
        z = np.where(np.abs(Xc[..., 2]) < MIN_DEPTH, MIN_DEPTH, Xc[..., 2])
        K = self.K

        dproj = np.zeros((V, M, 2, 3))
        dproj[..., 0, 0] = K.fx / z
        dproj[..., 0, 1] = K.skew / z
        dproj[..., 0, 2] = -(K.fx * px + K.skew * py) / z**2
        dproj[..., 1, 1] = K.fy / z
        dproj[..., 1, 2] = -K.fy * py / z**2

        neg_skew = np.zeros((V, M, 3, 3))
        neg_skew[..., 0, 1] = RX[..., 2]
        neg_skew[..., 0, 2] = -RX[..., 1]
        neg_skew[..., 1, 0] = -RX[..., 2]
        neg_skew[..., 1, 2] = RX[..., 0]
        neg_skew[..., 2, 0] = RX[..., 1]
        neg_skew[..., 2, 1] = -RX[..., 0]
        d_points = dproj @ R[:, None, :, :]

        rows = np.arange(self.n_residuals).reshape(V, M, 2)
        row_idx, col_idx, values = [], [], []

        def put(r: np.ndarray, c: np.ndarray, block: np.ndarray):
            rr, cc = np.broadcast_arrays(r[..., None], c)
            row_idx.append(rr.ravel())
            col_idx.append(cc.ravel())
            values.append(block.ravel())

        for v, (col, comps) in self.camera_columns.items():
            J_rot = dproj[v] @ neg_skew[v] @ left_jacobian(x[col : col + 3])
            put(rows[v], np.arange(col, col + 3), J_rot)
            put(rows[v], col + 3 + np.arange(len(comps)), dproj[v][..., comps])
        point_cols = self.point_column + 3 * np.arange(M)[:, None] + np.arange(3)
        put(rows, np.broadcast_to(point_cols[None, :, None, :], d_points.shape), d_points)

        J = coo_matrix(
            (np.concatenate(values), (np.concatenate(row_idx), np.concatenate(col_idx))),
            shape=(self.n_residuals, self.n_params),
        )
        return J.tocsr() if sparse else J.toarray()

    def poses(self, x: Optional[np.ndarray] = None) -> List[CameraPose]:
        R, t, _ = self.unpack(x)
        return [CameraPose(Rv, tv) for Rv, tv in zip(R, t)]


def bundle_adjust(
    structure: np.ndarray,
    poses: Sequence[CameraPose],
    observations: np.ndarray,
    K: CameraIntrinsics,
    config: BundleConfig,
    fixed_translation: Optional[Tuple[int, int]] = None,
) -> BundleResult:
    """
    Minimize the robustified reprojection error with ``least_squares``.

    Small problems solve the trust-region subproblem exactly on a dense
    Jacobian; above ``DENSE_PARAM_LIMIT`` parameters the Jacobian stays sparse
    and LSMR is used. Input whose residuals are not finite is returned
    unchanged with ``converged=False``.

    Args:
        structure: ``(M, 3)`` initial points.
        poses: initial poses, first one held fixed.
        observations: ``(V, M, 2)`` pixel observations.
        K: shared intrinsics.
        config: solver settings.
        fixed_translation: translation component pinned to fix scale.

    Returns:
        BundleResult with the refined state.
    """
    problem = BundleProblem(structure, poses, observations, K, fixed_translation)
    r0 = problem.residuals()
    if not np.all(np.isfinite(r0)) or not np.all(np.isfinite(problem.x0)):
        logger.warning("bundle adjustment skipped: initial state is not finite")
        return BundleResult(
            structure=problem.X0.copy(),
            poses=list(poses),
            cost=float("inf"),
            initial_cost=float("inf"),
            message="non-finite initial state",
        )

    sparse = problem.n_params > DENSE_PARAM_LIMIT

    def jac(x: np.ndarray) -> Union[np.ndarray, csr_matrix]:
        return problem.jacobian(x, sparse=sparse)

    result = least_squares(
        problem.residuals,
        problem.x0,
        jac=jac,
        method="trf",
        loss=config.loss,
        f_scale=config.huber_delta,
        x_scale="jac",
        tr_solver="lsmr" if sparse else "exact",
        ftol=config.convergence_tol,
        xtol=config.step_tol,
        gtol=config.gradient_tol,
        max_nfev=config.max_iterations,
    )
    initial_cost = robust_cost(r0, config.loss, config.huber_delta)
    logger.debug(
        "bundle adjustment: %d evaluations, cost %.6e -> %.6e (%s)",
        result.nfev,
        initial_cost,
        result.cost,
        result.message,
    )
    return BundleResult(
        structure=problem.unpack(result.x)[2].copy(),
        poses=problem.poses(result.x),
        cost=float(result.cost),
        initial_cost=initial_cost,
        evaluations=int(result.nfev),
        converged=bool(result.status > 0),
        gradient_norm=float(result.optimality),
        message=str(result.message),
    )
