"""Planar homographies: normalized DLT, robust RANSAC fit and transfer error."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateConfiguration, InsufficientMatches, NoConsensus
from ..odometry.two_view import hartley_transform, ransac_iterations

MIN_POINTS = 4


def normalize_homography(H: np.ndarray) -> np.ndarray:
    """Scale so that ``H[2, 2] == 1``, or to unit Frobenius norm if that entry vanishes."""
    H = np.asarray(H, dtype=np.float64)
    norm = np.linalg.norm(H)
    if abs(H[2, 2]) > 1e-12 * norm:
        return H / H[2, 2]
    H = H / norm
    # fix the sign so the largest-magnitude entry is positive
    k = np.argmax(np.abs(H))
    return -H if H.flat[k] < 0 else H


def apply_homography(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map (N, 2) points; points sent to infinity come back as ``inf``."""
    pts = np.asarray(points, dtype=np.float64)
    q = pts @ H[:, :2].T + H[:, 2]
    w = q[:, 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = q[:, :2] / w
    out[~np.isfinite(out).all(axis=1)] = np.inf
    return out


def symmetric_transfer_error(H: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Forward plus backward reprojection distance for each correspondence."""
    H_inv = np.linalg.inv(H)
    fwd = np.linalg.norm(apply_homography(H, pts_a) - pts_b, axis=1)
    bwd = np.linalg.norm(apply_homography(H_inv, pts_b) - pts_a, axis=1)
    err = fwd + bwd
    return np.where(np.isfinite(err), err, np.inf)


def _has_collinear_triple(pts: np.ndarray, rel_tol: float = 1e-9) -> bool:
    scale = max(np.ptp(pts, axis=0).max(), 1e-300)
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                d1, d2 = pts[j] - pts[i], pts[k] - pts[i]
                if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= rel_tol * scale * scale:
                    return True
    return False


def estimate_homography_dlt(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Homography with ``pts_b ~ H pts_a`` from >= 4 correspondences.

    Both point sets are Hartley-normalized before solving the 2n x 9 system
    by SVD. Raises :class:`DegenerateConfiguration` for minimal sets with
    three collinear points, for a null space that is not one-dimensional
    and for a singular result.
    """
    a = np.asarray(pts_a, dtype=np.float64)
    b = np.asarray(pts_b, dtype=np.float64)
    n = len(a)
    if n < MIN_POINTS or len(b) != n:
        raise DegenerateConfiguration(f"need >= {MIN_POINTS} correspondences, got {n}")
    if n == MIN_POINTS and (_has_collinear_triple(a) or _has_collinear_triple(b)):
        raise DegenerateConfiguration("three of the four points are collinear")
    Ta, Tb = hartley_transform(a), hartley_transform(b)
    an = a @ Ta[:2, :2].T + Ta[:2, 2]
    bn = b @ Tb[:2, :2].T + Tb[:2, 2]
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = an
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -bn[:, 0:1] * an
    A[0::2, 8] = -bn[:, 0]
    A[1::2, 3:5] = an
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -bn[:, 1:2] * an
    A[1::2, 8] = -bn[:, 1]
    if n == MIN_POINTS:
        A = np.vstack([A, np.zeros((1, 9))])  # full SVD exposes the 9th singular value
    _, s, Vt = np.linalg.svd(A)
    if s[-2] - s[-1] < 1e-12:
        raise DegenerateConfiguration("homography null space is not one-dimensional")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    H = normalize_homography(H)
    if not np.isfinite(H).all() or abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateConfiguration("estimated homography is singular")
    return H


def estimate_homography_ransac(
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    threshold_px: float = 3.0,
    max_iters: int = 2000,
    seed: int | np.random.Generator = 0,
    confidence: float = 0.999,
) -> tuple[np.ndarray, np.ndarray]:
    """Robust homography from matched pixel positions.

    Hypotheses come from random 4-point samples; a match is an inlier when
    its symmetric transfer error is below ``threshold_px``. The winner is
    re-estimated on all its inliers. Returns ``(H, inlier_mask)``.
    """
    a = np.asarray(pts_a, dtype=np.float64)
    b = np.asarray(pts_b, dtype=np.float64)
    n = len(a)
    if n < MIN_POINTS or len(b) != n:
        raise InsufficientMatches(f"need >= {MIN_POINTS} matches, got {n}")
    rng = np.random.default_rng(seed)
    best_H, best_mask, best_count, best_err = None, None, 0, np.inf
    needed, it = max_iters, 0
    while it < needed:
        it += 1
        sample = rng.choice(n, MIN_POINTS, replace=False)
        try:
            H = estimate_homography_dlt(a[sample], b[sample])
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        err = symmetric_transfer_error(H, a, b)
        mask = err < threshold_px
        count = int(mask.sum())
        if count < MIN_POINTS:
            continue
        sse = float(np.sum(err[mask] ** 2))
        if count > best_count or (count == best_count and sse < best_err):
            best_H, best_mask, best_count, best_err = H, mask, count, sse
            needed = ransac_iterations(count / n, MIN_POINTS, confidence, max_iters)
    if best_count < MIN_POINTS:
        raise NoConsensus(f"best homography has {best_count} inliers")

    H, mask = best_H, best_mask
    for _ in range(5):
        try:
            H_new = estimate_homography_dlt(a[mask], b[mask])
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            break
        new_mask = symmetric_transfer_error(H_new, a, b) < threshold_px
        if new_mask.sum() < mask.sum():
            break
        converged = np.array_equal(new_mask, mask)
        H, mask = H_new, new_mask
        if converged:
            break
    return H, mask
