"""Essential-matrix estimation, decomposition and linear triangulation."""

from __future__ import annotations

import numpy as np

from ..errors import (
    CheiralityFailure,
    DegenerateConfiguration,
    InsufficientCorrespondences,
    PointAtInfinity,
    ZeroBaseline,
)
from ..media_io import CameraIntrinsics
from .pose import Pose

W_MATRIX = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def to_normalized(points_px: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates (N, 2) to normalized camera coordinates (N, 2)."""
    pts = np.asarray(points_px, dtype=np.float64)
    return np.column_stack(
        [(pts[:, 0] - intrinsics.cx) / intrinsics.fx, (pts[:, 1] - intrinsics.cy) / intrinsics.fy]
    )


def hartley_transform(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _homog(points: np.ndarray) -> np.ndarray:
    return np.column_stack([points, np.ones(len(points))])


def enforce_essential(E: np.ndarray) -> np.ndarray:
    """Project onto the essential manifold with singular values (1, 1, 0)."""
    U, _, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def _canonical_sign(E: np.ndarray) -> np.ndarray:
    flat = E.ravel()
    k = int(np.argmax(np.abs(flat) > 1e-12 * np.abs(flat).max())) if np.abs(flat).max() > 0 else 0
    return -E if flat[k] < 0 else E


def eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Hartley-normalized 8-point estimate of E with ``xb^T E xa = 0``.

    Inputs are normalized camera coordinates (N >= 8, shape (N, 2)).
    """
    Ta, Tb = hartley_transform(xa), hartley_transform(xb)
    pa = _homog(xa) @ Ta.T
    pb = _homog(xb) @ Tb.T
    A = np.einsum("ni,nj->nij", pb, pa).reshape(len(pa), 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    E = enforce_essential(Tb.T @ F @ Ta)
    return _canonical_sign(E)


def epipolar_distances(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Symmetric epipolar distance: root of the summed squared point-to-line
    distances in both views (normalized units)."""
    pa, pb = _homog(xa), _homog(xb)
    la = pa @ E.T  # epipolar lines in view b
    lb = pb @ E  # epipolar lines in view a
    num = np.einsum("ni,ni->n", pb, la) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = num / (la[:, 0] ** 2 + la[:, 1] ** 2) + num / (lb[:, 0] ** 2 + lb[:, 1] ** 2)
    return np.sqrt(np.nan_to_num(d2, nan=np.inf))


def ransac_iterations(inlier_ratio: float, sample_size: int, confidence: float, max_iters: int) -> int:
    if inlier_ratio <= 0:
        return max_iters
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return 1
    needed = np.log(1.0 - confidence) / np.log(1.0 - p_good)
    return int(min(max_iters, np.ceil(needed)))


def estimate_essential_ransac(
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    intrinsics: CameraIntrinsics,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
    confidence: float = 0.99,
) -> tuple[np.ndarray, np.ndarray]:
    """Robust essential matrix between two pixel point sets.

    Returns ``(E, inlier_mask)`` where ``E`` has singular values (1, 1, 0)
    and relates normalized coordinates as ``xb^T E xa = 0``.
    """
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    n = len(pts_a)
    if n < 8 or len(pts_b) != n:
        raise InsufficientCorrespondences(f"need >= 8 correspondences, got {n}")
    xa, xb = to_normalized(pts_a, intrinsics), to_normalized(pts_b, intrinsics)
    thr = threshold_px / np.sqrt(intrinsics.fx * intrinsics.fy)
    rng = np.random.default_rng(seed)

    best_E, best_mask = None, np.zeros(n, dtype=bool)
    best_count, best_err = 0, np.inf
    needed, it = max_iters, 0
    while it < needed:
        it += 1
        sample = rng.choice(n, 8, replace=False)
        E = eight_point(xa[sample], xb[sample])
        d = epipolar_distances(E, xa, xb)
        mask = d < thr
        count = int(mask.sum())
        if count < 8:
            continue
        err = float(np.sum(d[mask] ** 2))
        if count > best_count or (count == best_count and err < best_err):
            best_E, best_mask, best_count, best_err = E, mask, count, err
            needed = ransac_iterations(count / n, 8, confidence, max_iters)
    if best_count < 8:
        raise DegenerateConfiguration("no essential-matrix consensus of at least 8 points")

    # Re-estimate on the consensus set; a refit is kept only while it does
    # not lose support (the algebraic fit can drift on weak parallax).
    E = eight_point(xa[best_mask], xb[best_mask])
    mask = epipolar_distances(E, xa, xb) < thr
    if mask.sum() < best_count:
        E, mask = best_E, best_mask
    for _ in range(5):
        E_new = eight_point(xa[mask], xb[mask])
        new_mask = epipolar_distances(E_new, xa, xb) < thr
        if new_mask.sum() < mask.sum() or np.array_equal(new_mask, mask):
            if new_mask.sum() == mask.sum():
                E, mask = E_new, new_mask
            break
        E, mask = E_new, new_mask
    return E, mask


def triangulate_normalized(
    P_a: np.ndarray, P_b: np.ndarray, xa: np.ndarray, xb: np.ndarray
) -> np.ndarray:
    """Batched linear DLT; returns homogeneous points (N, 4) with unit norm."""
    A = np.stack(
        [
            xa[:, 0, None] * P_a[2] - P_a[0],
            xa[:, 1, None] * P_a[2] - P_a[1],
            xb[:, 0, None] * P_b[2] - P_b[0],
            xb[:, 1, None] * P_b[2] - P_b[1],
        ],
        axis=1,
    )
    _, _, Vt = np.linalg.svd(A)
    return Vt[:, -1, :]


def _decomposition_candidates(E: np.ndarray) -> list[Pose]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    R1 = U @ W_MATRIX @ Vt
    R2 = U @ W_MATRIX.T @ Vt
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    return [Pose(R1, t), Pose(R1, -t), Pose(R2, t), Pose(R2, -t)]


def cheirality_mask(pose: Pose, xa: np.ndarray, xb: np.ndarray, w_eps: float = 1e-12) -> np.ndarray:
    """Points (normalized coordinates) landing in front of both cameras,
    with camera a at the identity."""
    P_a = np.hstack([np.eye(3), np.zeros((3, 1))])
    Xh = triangulate_normalized(P_a, pose.matrix, xa, xb)
    w = Xh[:, 3]
    finite = np.abs(w) > w_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / w[:, None]
    za = X[:, 2]
    zb = X @ pose.R[2] + pose.t[2]
    return finite & (za > 0) & (zb > 0)


def decompose_essential(
    E: np.ndarray,
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    intrinsics: CameraIntrinsics | None = None,
) -> Pose:
    """Relative pose (``||t|| = 1``) of camera b w.r.t. camera a.

    Points are pixels when ``intrinsics`` is given, otherwise normalized
    coordinates. The candidate with the most points in front of both
    cameras wins; a tie or zero support raises ``CheiralityFailure``.
    """
    xa, xb = np.atleast_2d(pts_a).astype(np.float64), np.atleast_2d(pts_b).astype(np.float64)
    if intrinsics is not None:
        xa, xb = to_normalized(xa, intrinsics), to_normalized(xb, intrinsics)
    if len(xa) < 1:
        raise CheiralityFailure("no correspondences")
    candidates = _decomposition_candidates(E)
    counts = [int(cheirality_mask(c, xa, xb).sum()) for c in candidates]
    order = sorted(range(4), key=lambda k: -counts[k])
    if counts[order[0]] == 0:
        raise CheiralityFailure("no candidate puts any point in front of both cameras")
    if counts[order[0]] == counts[order[1]]:
        raise CheiralityFailure(f"ambiguous cheirality: {counts}")
    return candidates[order[0]]


def projection_matrix(pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    return intrinsics.K @ pose.matrix


def triangulate(
    pose_a: Pose,
    pose_b: Pose,
    x_a,
    x_b,
    intrinsics: CameraIntrinsics,
) -> tuple[np.ndarray, tuple[bool, bool]]:
    """Triangulate one pixel correspondence.

    Returns the world point and whether it has positive depth in
    camera a and camera b.
    """
    if np.linalg.norm(pose_a.center - pose_b.center) <= 1e-9:
        raise ZeroBaseline("cameras share the same center")
    xa = to_normalized(np.atleast_2d(x_a), intrinsics)
    xb = to_normalized(np.atleast_2d(x_b), intrinsics)
    Xh = triangulate_normalized(pose_a.matrix, pose_b.matrix, xa, xb)[0]
    if abs(Xh[3]) < 1e-12:
        raise PointAtInfinity("triangulated point is at infinity")
    X = Xh[:3] / Xh[3]
    depth_a = float(pose_a.R[2] @ X + pose_a.t[2])
    depth_b = float(pose_b.R[2] @ X + pose_b.t[2])
    return X, (depth_a > 0, depth_b > 0)


def triangulate_points(
    pose_a: Pose, pose_b: Pose, xa: np.ndarray, xb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched two-view triangulation on normalized coordinates.

    Returns ``(X, ok)`` where ``ok`` marks finite points with positive depth
    in both cameras; rows failing the test contain NaN.
    """
    Xh = triangulate_normalized(pose_a.matrix, pose_b.matrix, xa, xb)
    w = Xh[:, 3]
    finite = np.abs(w) > 1e-12
    X = np.full((len(Xh), 3), np.nan)
    X[finite] = Xh[finite, :3] / w[finite, None]
    with np.errstate(invalid="ignore"):
        za = X @ pose_a.R[2] + pose_a.t[2]
        zb = X @ pose_b.R[2] + pose_b.t[2]
        ok = finite & (za > 0) & (zb > 0)
    return X, ok


def triangulate_multiview(poses: list[Pose], xs: np.ndarray) -> np.ndarray | None:
    """Linear DLT over any number of views; ``xs`` are normalized coordinates."""
    rows = []
    for pose, x in zip(poses, xs):
        P = pose.matrix
        rows.append(x[0] * P[2] - P[0])
        rows.append(x[1] * P[2] - P[1])
    _, _, Vt = np.linalg.svd(np.array(rows))
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-12:
        return None
    return Xh[:3] / Xh[3]
