"""Reprojection, pose Jacobians, DLT/RANSAC PnP and Gauss-Newton refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BehindCamera, InsufficientCorrespondences, NoConsensus
from ..media_io import CameraIntrinsics
from .pose import Pose, orthonormalize, so3_exp
from .two_view import ransac_iterations, to_normalized

MIN_PNP_POINTS = 6


def project(pose: Pose, intrinsics: CameraIntrinsics, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel projections (N, 2) and depths (N,) of world points."""
    Xc = pose.transform(np.atleast_2d(X))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * Xc[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * Xc[:, 1] / z + intrinsics.cy
    return np.column_stack([u, v]), z


def reprojection_error(pose: Pose, intrinsics: CameraIntrinsics, X, x_observed) -> float:
    """Pixel distance between the projection of ``X`` and ``x_observed``."""
    uv, z = project(pose, intrinsics, np.asarray(X, dtype=np.float64))
    if not z[0] > 0:
        raise BehindCamera(f"point depth {z[0]:.6g} is not positive")
    return float(np.linalg.norm(uv[0] - np.asarray(x_observed, dtype=np.float64)))


def reprojection_errors(pose: Pose, intrinsics: CameraIntrinsics, X: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorized errors; points behind the camera get ``inf``."""
    uv, z = project(pose, intrinsics, X)
    err = np.linalg.norm(uv - x, axis=1)
    return np.where(z > 0, err, np.inf)


def apply_update(pose: Pose, delta: np.ndarray) -> Pose:
    """Left-multiplicative rotation update and additive translation update."""
    return Pose(orthonormalize(so3_exp(delta[:3]) @ pose.R), pose.t + delta[3:])


def residuals_and_jacobian(
    pose: Pose, intrinsics: CameraIntrinsics, X: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked residuals (2N,) and their Jacobian (2N, 6) w.r.t. ``apply_update``'s delta."""
    RX = X @ pose.R.T
    Xc = RX + pose.t
    xc, yc, zc = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    fx, fy = intrinsics.fx, intrinsics.fy
    r = np.empty((len(X), 2))
    r[:, 0] = fx * xc / zc + intrinsics.cx - x[:, 0]
    r[:, 1] = fy * yc / zc + intrinsics.cy - x[:, 1]

    # d(projection)/d(Xc)
    dproj = np.zeros((len(X), 2, 3))
    dproj[:, 0, 0] = fx / zc
    dproj[:, 0, 2] = -fx * xc / zc**2
    dproj[:, 1, 1] = fy / zc
    dproj[:, 1, 2] = -fy * yc / zc**2
    # d(Xc)/d(omega) = -[R X]_x, d(Xc)/d(t) = I
    dXc = np.zeros((len(X), 3, 6))
    dXc[:, 0, 1], dXc[:, 0, 2] = RX[:, 2], -RX[:, 1]
    dXc[:, 1, 0], dXc[:, 1, 2] = -RX[:, 2], RX[:, 0]
    dXc[:, 2, 0], dXc[:, 2, 1] = RX[:, 1], -RX[:, 0]
    dXc[:, :, 3:] = np.eye(3)
    J = np.einsum("nij,njk->nik", dproj, dXc)
    return r.reshape(-1), J.reshape(-1, 6)


@dataclass
class RefinementInfo:
    iterations: int = 0
    converged: bool = False
    costs: list[float] = field(default_factory=list)
    last_update_norm: float = np.inf


def refine_pose(
    pose: Pose,
    intrinsics: CameraIntrinsics,
    X: np.ndarray,
    x: np.ndarray,
    max_iters: int = 50,
    tol: float = 1e-10,
    max_halvings: int = 10,
) -> tuple[Pose, RefinementInfo]:
    """Gauss-Newton on total squared reprojection error with step halving.

    The cost never increases: a step that fails to decrease it after
    ``max_halvings`` halvings ends the iteration.
    """
    info = RefinementInfo()
    r, J = residuals_and_jacobian(pose, intrinsics, X, x)
    cost = float(r @ r)
    info.costs.append(cost)
    for _ in range(max_iters):
        delta, *_ = np.linalg.lstsq(J, -r, rcond=None)
        info.last_update_norm = float(np.linalg.norm(delta))
        if info.last_update_norm < tol:
            info.converged = True
            break
        info.iterations += 1
        step = delta
        accepted = False
        for _ in range(max_halvings + 1):
            candidate = apply_update(pose, step)
            r_new, J_new = residuals_and_jacobian(candidate, intrinsics, X, x)
            new_cost = float(r_new @ r_new)
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            info.converged = True  # no descent direction left at this precision
            break
        pose, r, J, cost = candidate, r_new, J_new, new_cost
        info.costs.append(cost)
    return pose, info


def _dlt_pose(X: np.ndarray, xn: np.ndarray) -> Pose | None:
    """Camera pose from >= 6 world points and normalized image points."""
    centroid = X.mean(axis=0)
    scale = np.sqrt(3.0) / max(np.sqrt(((X - centroid) ** 2).sum(axis=1)).mean(), 1e-15)
    T = np.eye(4)
    T[:3, :3] *= scale
    T[:3, 3] = -scale * centroid
    Xn = np.column_stack([(X - centroid) * scale, np.ones(len(X))])
    n = len(X)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xn
    A[0::2, 8:12] = -xn[:, 0, None] * Xn
    A[1::2, 4:8] = Xn
    A[1::2, 8:12] = -xn[:, 1, None] * Xn
    _, S, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4) @ T
    M = P[:, :3]
    det = np.linalg.det(M)
    if not np.isfinite(det) or abs(det) < 1e-300:
        return None
    if det < 0:
        P = -P
        M = -M
    U, s, Vt = np.linalg.svd(M)
    R = U @ Vt
    k = s.mean()
    if k <= 0:
        return None
    return Pose(R, P[:, 3] / k)


def estimate_pose_pnp(
    points_3d: np.ndarray,
    points_2d: np.ndarray,
    intrinsics: CameraIntrinsics,
    initial_pose: Pose | None = None,
    threshold_px: float = 2.0,
    seed: int = 0,
    max_iters: int = 2000,
    confidence: float = 0.99,
) -> tuple[Pose, np.ndarray, RefinementInfo]:
    """RANSAC over 6-point DLT solves followed by Gauss-Newton on the inliers.

    ``initial_pose`` is scored as the first hypothesis; a sampled hypothesis
    replaces the incumbent only with more inliers, or as many with a
    strictly lower inlier error.
    """
    X = np.asarray(points_3d, dtype=np.float64)
    x = np.asarray(points_2d, dtype=np.float64)
    n = len(X)
    if n < MIN_PNP_POINTS or len(x) != n:
        raise InsufficientCorrespondences(f"need >= {MIN_PNP_POINTS} 3D-2D correspondences, got {n}")
    xn = to_normalized(x, intrinsics)
    rng = np.random.default_rng(seed)

    best_pose, best_mask, best_count, best_err = None, None, 0, np.inf

    def consider(pose: Pose) -> None:
        nonlocal best_pose, best_mask, best_count, best_err, needed
        err = reprojection_errors(pose, intrinsics, X, x)
        mask = err < threshold_px
        count = int(mask.sum())
        sse = float(np.sum(err[mask] ** 2))
        if count > best_count or (count == best_count and count > 0 and sse < best_err):
            best_pose, best_mask, best_count, best_err = pose, mask, count, sse
            needed = ransac_iterations(count / n, MIN_PNP_POINTS, confidence, max_iters)

    needed = max_iters
    if initial_pose is not None:
        consider(initial_pose)
    it = 0
    while it < needed:
        it += 1
        sample = rng.choice(n, MIN_PNP_POINTS, replace=False)
        pose = _dlt_pose(X[sample], xn[sample])
        if pose is not None:
            consider(pose)
    if best_count < MIN_PNP_POINTS:
        raise NoConsensus(f"best PnP hypothesis has {best_count} inliers")

    pose, info = refine_pose(best_pose, intrinsics, X[best_mask], x[best_mask])
    mask = reprojection_errors(pose, intrinsics, X, x) < threshold_px
    if mask.sum() > best_count:
        pose, info = refine_pose(pose, intrinsics, X[mask], x[mask])
        mask = reprojection_errors(pose, intrinsics, X, x) < threshold_px
    if mask.sum() < MIN_PNP_POINTS:
        raise NoConsensus("refined pose lost consensus")
    return pose, mask, info
