"""FAST-9 corners, steered binary descriptors and Hamming matching."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall, InvalidValue, OutOfBounds

PATCH_RADIUS = 15
SUPPRESSION_RADIUS = 3
DESCRIPTOR_BITS = 256
DESCRIPTOR_BYTES = DESCRIPTOR_BITS // 8
DEFAULT_PATTERN_SEED = 0x9E3779B9

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)  # fmt: skip
ARC_LENGTH = 9


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float
    orientation: float


@dataclass
class Keypoints:
    """Column-oriented keypoint set; ``xy`` holds sub-pixel positions."""

    xy: np.ndarray
    score: np.ndarray
    orientation: np.ndarray

    @classmethod
    def empty(cls) -> "Keypoints":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.score)

    def __getitem__(self, i: int) -> Keypoint:
        return Keypoint(
            float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.score[i]), float(self.orientation[i])
        )

    def subset(self, idx) -> "Keypoints":
        return Keypoints(self.xy[idx], self.score[idx], self.orientation[idx])

    @property
    def pixel(self) -> np.ndarray:
        """Integer pixel each keypoint was detected at (column, row)."""
        return np.rint(self.xy).astype(np.int64)


@dataclass
class Matches:
    index_a: np.ndarray
    index_b: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.index_a)


def _arc_score(mask: np.ndarray, magnitude: np.ndarray) -> np.ndarray:
    """Largest summed magnitude over a contiguous circular run of >= 9 set pixels."""
    n = len(CIRCLE)
    run = np.zeros(mask.shape[1:], dtype=np.int32)
    acc = np.zeros(mask.shape[1:], dtype=np.int32)
    best = np.zeros(mask.shape[1:], dtype=np.int32)
    for k in range(2 * n - 1):
        m = mask[k % n]
        run = np.where(m, run + 1, 0)
        acc = np.where(m, acc + magnitude[k % n], 0)
        ok = (run >= ARC_LENGTH) & (run <= n)
        best = np.where(ok & (acc > best), acc, best)
    full = mask.all(axis=0)
    best = np.where(full, magnitude.sum(axis=0), best)
    return best


def fast_score_map(gray: np.ndarray, threshold: int) -> np.ndarray:
    """Per-pixel FAST-9 score; zero where the segment test fails."""
    img = gray.astype(np.int32)
    h, w = img.shape
    scores = np.zeros((h, w), dtype=np.int32)
    if h < 7 or w < 7:
        return scores
    center = img[3 : h - 3, 3 : w - 3]
    ring = np.stack([img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] for dx, dy in CIRCLE])
    diff = ring - center
    bright = _arc_score(diff > threshold, diff)
    dark = _arc_score(diff < -threshold, -diff)
    scores[3 : h - 3, 3 : w - 3] = np.maximum(bright, dark)
    return scores


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def orientations(gray: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Intensity-centroid angle atan2(m01, m10) over a radius-15 disk."""
    if len(pixels) == 0:
        return np.zeros(0)
    r = PATCH_RADIUS
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (xx * xx + yy * yy <= r * r).ravel()
    dx, dy = xx.ravel()[disk], yy.ravel()[disk]
    padded = np.pad(gray, r)  # zero intensity outside the image
    values = padded[pixels[:, 1, None] + r + dy[None, :], pixels[:, 0, None] + r + dx[None, :]].astype(np.int64)
    m10 = values @ dx
    m01 = values @ dy
    return np.arctan2(m01, m10).astype(np.float64)


def detect_corners(
    gray: np.ndarray,
    threshold: int = 20,
    max_keypoints: int = 500,
    border: int = PATCH_RADIUS,
    subpixel: bool = True,
) -> Keypoints:
    """FAST-9 detection with radius-3 non-maximum suppression.

    Keypoints are returned by descending score (ties broken by row, then
    column) and never lie closer than ``border`` pixels to the image edge.
    """
    if gray.ndim != 2:
        raise InvalidValue("detect_corners expects a single-channel image")
    if threshold < 1:
        raise InvalidValue("threshold must be >= 1")
    h, w = gray.shape
    if h < 2 * border + 1 or w < 2 * border + 1 or h < 2 * PATCH_RADIUS + 1 or w < 2 * PATCH_RADIUS + 1:
        raise ImageTooSmall(f"image {w}x{h} is smaller than {2 * PATCH_RADIUS + 1} per side")
    scores = fast_score_map(gray, threshold)
    edge = max(border, 3)
    scores[:edge, :] = 0
    scores[h - edge :, :] = 0
    scores[:, :edge] = 0
    scores[:, w - edge :] = 0

    local_max = ndimage.maximum_filter(scores, footprint=_disk(SUPPRESSION_RADIUS), mode="constant")
    ys, xs = np.nonzero((scores > 0) & (scores == local_max))
    if len(ys) == 0:
        return Keypoints.empty()
    cand_scores = scores[ys, xs]
    order = np.lexsort((xs, ys, -cand_scores))
    ys, xs, cand_scores = ys[order], xs[order], cand_scores[order]

    # plateaus survive the max filter; resolve them greedily
    taken = np.zeros((h, w), dtype=bool)
    r = SUPPRESSION_RADIUS
    disk = _disk(r)
    keep = []
    for i in range(len(ys)):
        y, x = ys[i], xs[i]
        y0, y1, x0, x1 = max(y - r, 0), min(y + r + 1, h), max(x - r, 0), min(x + r + 1, w)
        window = disk[y0 - y + r : y1 - y + r, x0 - x + r : x1 - x + r]
        if taken[y0:y1, x0:x1][window].any():
            continue
        taken[y, x] = True
        keep.append(i)
        if len(keep) >= max_keypoints:
            break
    keep = np.asarray(keep, dtype=np.int64)
    ys, xs, cand_scores = ys[keep], xs[keep], cand_scores[keep]
    pixels = np.stack([xs, ys], axis=1)

    xy = pixels.astype(np.float64)
    if subpixel:
        s = scores.astype(np.float64)
        for axis, (oy, ox) in enumerate(((0, 1), (1, 0))):
            minus = s[ys - oy, xs - ox]
            plus = s[ys + oy, xs + ox]
            mid = s[ys, xs]
            denom = minus - 2.0 * mid + plus
            with np.errstate(divide="ignore", invalid="ignore"):
                offset = np.where(denom < 0, 0.5 * (minus - plus) / denom, 0.0)
            xy[:, axis] += np.clip(offset, -0.49, 0.49)
    return Keypoints(xy, cand_scores.astype(np.float64), orientations(gray, pixels))


def gaussian_kernel(sigma: float = 2.0, size: int = 7) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(gray: np.ndarray, sigma: float = 2.0, size: int = 7) -> np.ndarray:
    """Separable Gaussian smoothing used before describing."""
    k = gaussian_kernel(sigma, size)
    out = ndimage.correlate1d(gray.astype(np.float64), k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


@lru_cache(maxsize=8)
def sampling_pattern(seed: int = DEFAULT_PATTERN_SEED) -> np.ndarray:
    """256 point pairs inside the radius-15 disk, shape (256, 2, 2) as (pair, point, xy)."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < DESCRIPTOR_BITS:
        p, q = rng.integers(-PATCH_RADIUS, PATCH_RADIUS + 1, size=(2, 2))
        if p @ p > PATCH_RADIUS**2 or q @ q > PATCH_RADIUS**2 or (p == q).all():
            continue
        pairs.append((p, q))
    pattern = np.array(pairs, dtype=np.float64)
    pattern.setflags(write=False)
    return pattern


def describe_all(smoothed: np.ndarray, keypoints: Keypoints, pattern_seed: int = DEFAULT_PATTERN_SEED) -> np.ndarray:
    """Descriptors for every keypoint, packed into (N, 32) uint8 rows."""
    n = len(keypoints)
    if n == 0:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    pattern = sampling_pattern(pattern_seed)
    c, s = np.cos(keypoints.orientation), np.sin(keypoints.orientation)
    px, py = pattern[..., 0], pattern[..., 1]
    rx = np.rint(c[:, None, None] * px[None] - s[:, None, None] * py[None]).astype(np.int64)
    ry = np.rint(s[:, None, None] * px[None] + c[:, None, None] * py[None]).astype(np.int64)
    centers = keypoints.pixel
    cols = centers[:, 0, None, None] + rx
    rows = centers[:, 1, None, None] + ry
    h, w = smoothed.shape
    if cols.min() < 0 or rows.min() < 0 or cols.max() >= w or rows.max() >= h:
        raise OutOfBounds("descriptor pattern leaves the image")
    values = smoothed[rows, cols]
    bits = values[:, :, 0] < values[:, :, 1]
    return np.packbits(bits, axis=1)


def describe(smoothed: np.ndarray, keypoint: Keypoint, pattern_seed: int = DEFAULT_PATTERN_SEED) -> np.ndarray:
    kps = Keypoints(np.array([[keypoint.x, keypoint.y]]), np.array([keypoint.score]), np.array([keypoint.orientation]))
    return describe_all(smoothed, kps, pattern_seed)[0]


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between rows of two packed descriptor arrays."""
    a64 = np.ascontiguousarray(a).view(np.uint64)
    b64 = np.ascontiguousarray(b).view(np.uint64)
    return np.bitwise_count(a64[:, None, :] ^ b64[None, :, :]).sum(axis=2, dtype=np.int64)


def match_descriptors(
    desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.8, cross_check: bool = True
) -> Matches:
    """Nearest-neighbour matching with Lowe's ratio test and optional cross check."""
    if not 0 < ratio <= 1:
        raise InvalidValue("ratio must be in (0, 1]")
    if len(desc_a) == 0 or len(desc_b) == 0:
        return Matches(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    d = hamming(desc_a, desc_b)
    best_b = np.argmin(d, axis=1)
    rows = np.arange(len(desc_a))
    best = d[rows, best_b]
    if d.shape[1] > 1:
        masked = d.copy()
        masked[rows, best_b] = np.iinfo(np.int64).max
        second = masked.min(axis=1).astype(np.float64)
    else:
        second = np.full(len(desc_a), np.inf)
    keep = (second > 0) & (best < ratio * second)
    if cross_check:
        best_a = np.argmin(d, axis=0)
        keep &= best_a[best_b] == rows
    idx = np.nonzero(keep)[0]
    return Matches(idx, best_b[idx], best[idx])


def refine_correspondences(
    image_a: np.ndarray,
    image_b: np.ndarray,
    xy_a: np.ndarray,
    xy_b: np.ndarray,
    radius: int = 5,
    max_iters: int = 10,
    max_shift: float = 1.5,
    return_dissimilarity: bool = False,
):
    """Sub-pixel positions in ``image_b`` that best align each patch of ``image_a``.

    Translation-only Lucas-Kanade: the square window of half-width
    ``radius`` around ``xy_a[i]`` is the template, and ``xy_b[i]`` is moved
    by Gauss-Newton steps on the sum of squared differences. Detector
    positions on texture drift a little with viewpoint; aligning the patches
    removes most of that jitter. A point keeps its input position when its
    window leaves the image, the window is textureless, or the result moves
    more than ``max_shift`` pixels.

    With ``return_dissimilarity`` the result is ``(xy, d)`` where ``d`` is
    one minus the normalized cross-correlation of the aligned patches (1.0
    for points that could not be aligned). Patches straddling an occlusion
    boundary do not align under a pure shift and score high.
    """
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    pa = np.asarray(xy_a, dtype=np.float64).reshape(-1, 2)
    start = np.asarray(xy_b, dtype=np.float64).reshape(-1, 2)
    if len(pa) != len(start):
        raise InvalidValue("xy_a and xy_b must have the same length")
    out = start.copy()
    if len(pa) == 0:
        return (out, np.zeros(0)) if return_dissimilarity else out
    gy, gx = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    gx, gy = gx.ravel(), gy.ravel()

    def sample(img, p, dx=0.0, dy=0.0):
        coords = [p[:, 1:2] + gy + dy, p[:, 0:1] + gx + dx]
        return ndimage.map_coordinates(img, coords, order=1, mode="nearest")

    def fits(img, p):
        h, w = img.shape
        return (p[:, 0] - radius >= 0) & (p[:, 0] + radius <= w - 1) & (p[:, 1] - radius >= 0) & (p[:, 1] + radius <= h - 1)

    ok = fits(a, pa) & fits(b, start)
    template = sample(a, pa)
    p = start.copy()
    active = ok.copy()
    for _ in range(max_iters):
        if not active.any():
            break
        q = p[active]
        r = template[active] - sample(b, q)
        ix = sample(b, q, 0.5) - sample(b, q, -0.5)
        iy = sample(b, q, 0.0, 0.5) - sample(b, q, 0.0, -0.5)
        hxx, hxy, hyy = (ix * ix).sum(1), (ix * iy).sum(1), (iy * iy).sum(1)
        bx, by = (ix * r).sum(1), (iy * r).sum(1)
        det = hxx * hyy - hxy * hxy
        # a near-singular normal matrix means an edge or flat patch
        trace = hxx + hyy
        solvable = det > 1e-6 * np.maximum(trace * trace, 1e-12)
        idx = np.nonzero(active)[0]
        ok[idx[~solvable]] = False
        safe = np.where(solvable, det, 1.0)
        step = np.column_stack([(hyy * bx - hxy * by) / safe, (hxx * by - hxy * bx) / safe])
        step[~solvable] = 0.0
        p[idx] += step
        moved_far = np.linalg.norm(p[idx] - start[idx], axis=1) > max_shift
        inside = fits(b, p[idx])
        ok[idx[moved_far | ~inside]] = False
        done = np.abs(step).max(axis=1) < 1e-3
        active[idx[done | moved_far | ~inside | ~solvable]] = False
    out[ok] = p[ok]
    if not return_dissimilarity:
        return out
    dis = np.ones(len(pa))
    if ok.any():
        t = template[ok] - template[ok].mean(axis=1, keepdims=True)
        i = sample(b, out[ok])
        i = i - i.mean(axis=1, keepdims=True)
        denom = np.sqrt((t * t).sum(1) * (i * i).sum(1))
        ncc = np.where(denom > 0, (t * i).sum(1) / np.maximum(denom, 1e-300), 0.0)
        dis[ok] = 1.0 - ncc
    return out, dis
