"""Per-cluster panorama construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import ndimage

from .. import features
from ..errors import PanosumError
from ..media_io import CameraIntrinsics, to_grayscale
from .alignment import AlignmentTree, PairResult, build_alignment_trees
from .blending import feather_weights, gain_compensate, multiband_blend
from .cylindrical import cylindrical_warp, inside, sample_bilinear
from .homography import apply_homography, estimate_homography_ransac

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StitchConfig:
    cylindrical: bool = True
    blend_levels: int = 4
    ransac_threshold_px: float = 3.0
    ransac_max_iters: int = 2000
    min_edge_inliers: int = 15
    match_fanout: int = 4
    all_pairs_max: int = 8
    fast_threshold: int = 20
    max_keypoints: int = 1000
    match_ratio: float = 0.8
    pattern_seed: int = features.DEFAULT_PATTERN_SEED
    gain_lambda: float = 0.01
    max_canvas_factor: float = 16.0
    seed: int = 0


@dataclass
class Panorama:
    canvas: np.ndarray
    origin: tuple[float, float]  # reference-frame coordinates of canvas pixel (0, 0)
    keyframe_ids: list[int]
    cluster_id: int
    reference_id: int
    coverage: np.ndarray | None = None
    gains: dict[int, float] = field(default_factory=dict)


@dataclass
class _Prepared:
    image: np.ndarray
    mask: np.ndarray
    keypoints: features.Keypoints
    descriptors: np.ndarray


def _prepare(image: np.ndarray, intrinsics: CameraIntrinsics | None, cfg: StitchConfig) -> _Prepared:
    if cfg.cylindrical:
        if intrinsics is None:
            raise ValueError("cylindrical pre-warp needs camera intrinsics")
        img, mask = cylindrical_warp(image, intrinsics.fx, (intrinsics.cx, intrinsics.cy))
    else:
        img, mask = image, np.ones(image.shape[:2], dtype=bool)
    gray = to_grayscale(img)
    try:
        kps = features.detect_corners(gray, cfg.fast_threshold, cfg.max_keypoints)
    except PanosumError:
        kps = features.Keypoints.empty()
    if len(kps) and not mask.all():
        # corners along the warp boundary are artifacts of the projection
        margin = features.PATCH_RADIUS + 2
        interior = ndimage.binary_erosion(np.pad(mask, 1), iterations=margin)[1:-1, 1:-1]
        px = kps.pixel
        kps = kps.subset(np.nonzero(interior[px[:, 1], px[:, 0]])[0])
    desc = (
        features.describe_all(features.smooth(gray), kps, cfg.pattern_seed)
        if len(kps)
        else np.zeros((0, 32), dtype=np.uint8)
    )
    return _Prepared(img, mask, kps, desc)


def candidate_pairs(n: int, affinity: np.ndarray | None, cfg: StitchConfig) -> list[tuple[int, int]]:
    """All pairs for small clusters, otherwise each image with its nearest neighbours."""
    if n <= cfg.all_pairs_max:
        return list(combinations(range(n), 2))
    if affinity is None:
        idx = np.arange(n)
        affinity = -np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    pairs = set()
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (-affinity[i, j], j))
        for j in order[: cfg.match_fanout]:
            pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)


def match_pair(pa: _Prepared, pb: _Prepared, a: int, b: int, cfg: StitchConfig, rng) -> PairResult:
    if len(pa.keypoints) < 4 or len(pb.keypoints) < 4:
        return PairResult(a, b, 0, None)
    m = features.match_descriptors(pa.descriptors, pb.descriptors, cfg.match_ratio, True)
    if len(m) < 4:
        return PairResult(a, b, 0, None)
    try:
        H, inl = estimate_homography_ransac(
            pa.keypoints.xy[m.index_a], pb.keypoints.xy[m.index_b],
            cfg.ransac_threshold_px, cfg.ransac_max_iters, rng,
        )
    except PanosumError:
        return PairResult(a, b, 0, None)
    return PairResult(a, b, int(inl.sum()), H)


def _bounds(tree: AlignmentTree, shapes: dict[int, tuple[int, int]]):
    pts = []
    for i, T in tree.transforms.items():
        h, w = shapes[i]
        corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
        pts.append(apply_homography(T, corners))
    pts = np.vstack(pts)
    return np.floor(pts.min(axis=0)), np.ceil(pts.max(axis=0))


def composite(tree: AlignmentTree, prepared: dict[int, _Prepared], cfg: StitchConfig):
    """Warp every member into the reference frame and blend.

    Returns ``(canvas, origin, coverage, gains)`` or ``None`` when the
    tree's transforms would produce an unreasonably large canvas.
    """
    shapes = {i: prepared[i].image.shape[:2] for i in tree.transforms}
    lo, hi = _bounds(tree, shapes)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        return None
    W = int(hi[0] - lo[0]) + 1
    H = int(hi[1] - lo[1]) + 1
    W = max(W, max(s[1] for s in shapes.values()))
    H = max(H, max(s[0] for s in shapes.values()))
    area_budget = cfg.max_canvas_factor * sum(s[0] * s[1] for s in shapes.values())
    if W * H > area_budget:
        log.warning("canvas %dx%d exceeds budget; component left unstitched", W, H)
        return None
    origin = (float(lo[0]), float(lo[1]))
    ids = tree.nodes
    color = prepared[ids[0]].image.ndim == 3
    warped, masks = [], []
    for i in ids:
        p = prepared[i]
        h, w = p.image.shape[:2]
        T_inv = np.linalg.inv(tree.transforms[i])
        uu, vv = np.meshgrid(np.arange(W, dtype=np.float64) + lo[0], np.arange(H, dtype=np.float64) + lo[1])
        src = apply_homography(T_inv, np.column_stack([uu.ravel(), vv.ravel()]))
        x = src[:, 0].reshape(H, W)
        y = src[:, 1].reshape(H, W)
        ok = np.isfinite(x) & np.isfinite(y) & inside(x, y, w, h)
        x = np.where(ok, x, -10.0)
        y = np.where(ok, y, -10.0)
        if not p.mask.all():
            ok &= sample_bilinear(p.mask.astype(np.float64), x, y) > 1.0 - 1e-9
        img = sample_bilinear(p.image, x, y)
        img[~ok] = 0.0
        warped.append(img)
        masks.append(ok)
    gains = gain_compensate(warped, masks, cfg.gain_lambda)
    weights = feather_weights(masks)
    filled = []
    for img, ok, g in zip(warped, masks, gains):
        img = img * g
        if ok.any() and not ok.all():
            # extend valid pixels outward so pyramid bands see no hard black edge
            _, (iy, ix) = ndimage.distance_transform_edt(~ok, return_indices=True)
            img = img[iy, ix]
        filled.append(img)
    canvas = multiband_blend(filled, weights, cfg.blend_levels)
    coverage = np.any(masks, axis=0)
    if color and canvas.ndim == 2:
        canvas = np.repeat(canvas[..., None], 3, axis=2)
    return canvas, origin, coverage, {i: float(g) for i, g in zip(ids, gains)}


def stitch_cluster(
    images: dict[int, np.ndarray],
    intrinsics: CameraIntrinsics | None,
    cluster_id: int = 0,
    config: StitchConfig = StitchConfig(),
    affinity: np.ndarray | None = None,
) -> list[Panorama]:
    """Panoramas for one cluster: one per connected component of its match graph.

    ``images`` maps keyframe ids to images; ``affinity`` (optional, indexed
    in sorted-id order) picks match partners for large clusters. Singleton
    components are emitted as the raw keyframe image.
    """
    if not images:
        raise ValueError("cluster has no images")
    ids = sorted(images)
    if len(ids) == 1:
        k = ids[0]
        return [Panorama(np.array(images[k]), (0.0, 0.0), [k], cluster_id, k, np.ones(images[k].shape[:2], bool))]

    prepared = {k: _prepare(images[k], intrinsics, config) for k in ids}
    rng = np.random.default_rng([config.seed, cluster_id])
    results = []
    for a, b in candidate_pairs(len(ids), affinity, config):
        ka, kb = ids[a], ids[b]
        results.append(match_pair(prepared[ka], prepared[kb], ka, kb, config, rng))
    trees = build_alignment_trees(ids, results, config.min_edge_inliers)

    panoramas = []
    for tree in trees:
        out = composite(tree, prepared, config) if len(tree.transforms) > 1 else None
        if out is None:
            for k in tree.nodes:
                panoramas.append(
                    Panorama(np.array(images[k]), (0.0, 0.0), [k], cluster_id, k, np.ones(images[k].shape[:2], bool))
                )
            continue
        canvas, origin, coverage, gains = out
        panoramas.append(Panorama(canvas, origin, tree.nodes, cluster_id, tree.reference, coverage, gains))
    return panoramas
