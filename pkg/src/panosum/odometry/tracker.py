"""Sequential monocular visual odometry: keyframes, poses and a sparse map."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import features
from ..errors import PanosumError
from ..media_io import CameraIntrinsics, Frame, to_grayscale
from .pnp import estimate_pose_pnp, refine_pose, reprojection_errors
from .pose import Pose
from .two_view import (
    decompose_essential,
    estimate_essential_ransac,
    to_normalized,
    triangulate_multiview,
    triangulate_points,
)

log = logging.getLogger(__name__)


@dataclass
class VOConfig:
    fast_threshold: int = 20
    max_keypoints: int = 500
    match_ratio: float = 0.8
    cross_check: bool = True
    pattern_seed: int = features.DEFAULT_PATTERN_SEED
    displacement_px: float = 12.0  # tau_d
    tracked_ratio: float = 0.6  # tau_r
    max_frame_gap: int = 30  # N_max
    essential_threshold_px: float = 1.0
    pnp_threshold_px: float = 2.0
    ransac_max_iters: int = 2000
    min_init_inliers: int = 50
    min_localize_inliers: int = 15
    max_reprojection_px: float = 2.0
    min_parallax_deg: float = 1.0
    refine_window: int = 5
    refine_rounds: int = 3
    refine_inlier_px: float = 1.0
    final_refine_rounds: int = 10
    align_patches: bool = True
    patch_radius: int = 5
    max_patch_dissimilarity: float = 0.01  # 1 - NCC after alignment
    seed: int = 0


@dataclass
class FrameFeatures:
    frame_index: int
    keypoints: features.Keypoints
    descriptors: np.ndarray
    image: np.ndarray | None = None  # gray, float64


@dataclass
class Keyframe:
    id: int
    frame_index: int
    pose: Pose | None
    keypoints: features.Keypoints
    descriptors: np.ndarray
    point_ids: np.ndarray  # map point per keypoint, -1 if none
    track_ids: np.ndarray  # pending (untriangulated) track per keypoint, -1 if none
    image: np.ndarray | None = field(default=None, repr=False)

    @property
    def observed_point_ids(self) -> list[int]:
        return sorted(int(p) for p in self.point_ids if p >= 0)


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    observations: dict[int, int] = field(default_factory=dict)  # keyframe id -> keypoint index


@dataclass
class VOResult:
    keyframes: list[Keyframe]
    map_points: dict[int, MapPoint]
    initialized: bool
    diagnostics: dict


def extract_features(frame: Frame, config: VOConfig) -> FrameFeatures:
    gray = to_grayscale(frame.image)
    kps = features.detect_corners(gray, config.fast_threshold, config.max_keypoints)
    desc = features.describe_all(features.smooth(gray), kps, config.pattern_seed)
    return FrameFeatures(frame.index, kps, desc, gray.astype(np.float64))


def keyframe_decision(
    matches: features.Matches,
    keyframe_xy: np.ndarray,
    frame_xy: np.ndarray,
    frames_since_keyframe: int,
    config: VOConfig = VOConfig(),
) -> bool:
    """True on large median motion, weak tracking, or a long keyframe gap."""
    if frames_since_keyframe >= config.max_frame_gap:
        return True
    n_ref = len(keyframe_xy)
    if n_ref == 0 or len(matches) == 0:
        return n_ref > 0
    if len(matches) / n_ref < config.tracked_ratio:
        return True
    disp = np.linalg.norm(frame_xy[matches.index_b] - keyframe_xy[matches.index_a], axis=1)
    return bool(np.median(disp) > config.displacement_px)


class _Tracker:
    def __init__(self, intrinsics: CameraIntrinsics, config: VOConfig):
        self.K = intrinsics
        self.cfg = config
        self.keyframes: list[Keyframe] = []
        self.points: dict[int, MapPoint] = {}
        self.tracks: dict[int, list[tuple[int, int]]] = {}
        self._next_point = 0
        self._next_track = 0
        self.initialized = False
        self.kf_stats: list[dict] = []
        self.tracking_failures = 0
        self.discarded_pre_init = 0
        self.cos_parallax = np.cos(np.radians(config.min_parallax_deg))

    # -- bookkeeping -------------------------------------------------------
    def _new_keyframe(self, ff: FrameFeatures, pose: Pose | None) -> Keyframe:
        n = len(ff.keypoints)
        kf = Keyframe(
            id=len(self.keyframes),
            frame_index=ff.frame_index,
            pose=pose,
            keypoints=ff.keypoints,
            descriptors=ff.descriptors,
            point_ids=np.full(n, -1, dtype=np.int64),
            track_ids=np.full(n, -1, dtype=np.int64),
            image=ff.image,
        )
        self.keyframes.append(kf)
        return kf

    def _add_point(self, X: np.ndarray, observations: dict[int, int]) -> None:
        pid = self._next_point
        self._next_point += 1
        self.points[pid] = MapPoint(pid, X, dict(observations))
        for kf_id, kp in observations.items():
            kf = self.keyframes[kf_id]
            kf.point_ids[kp] = pid
            kf.track_ids[kp] = -1

    def _remove_point(self, pid: int) -> None:
        mp = self.points.pop(pid)
        for kf_id, kp in mp.observations.items():
            self.keyframes[kf_id].point_ids[kp] = -1

    def _observation_arrays(self, observations: dict[int, int]):
        kfs = [self.keyframes[k] for k in sorted(observations)]
        px = np.array([kf.keypoints.xy[observations[kf.id]] for kf in kfs])
        return kfs, px

    def _point_is_consistent(self, X: np.ndarray, observations: dict[int, int]) -> bool:
        kfs, px = self._observation_arrays(observations)
        for kf, x in zip(kfs, px):
            err = reprojection_errors(kf.pose, self.K, X[None], x[None])[0]
            if not err <= self.cfg.max_reprojection_px:
                return False
        return True

    def _max_parallax_ok(self, X: np.ndarray, kfs: list[Keyframe]) -> bool:
        rays = np.array([X - kf.pose.center for kf in kfs])
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        cos = rays @ rays.T
        return bool(cos.min() < self.cos_parallax)

    # -- initialization ----------------------------------------------------
    def try_initialize(self, ref: Keyframe, ff: FrameFeatures, matches: features.Matches) -> bool:
        cfg = self.cfg
        if len(matches) < max(8, cfg.min_init_inliers):
            return False
        pa = ref.keypoints.xy[matches.index_a]
        pb = ff.keypoints.xy[matches.index_b]
        if np.median(np.linalg.norm(pb - pa, axis=1)) <= cfg.displacement_px:
            return False
        try:
            E, inl = estimate_essential_ransac(
                pa, pb, self.K, cfg.essential_threshold_px, cfg.ransac_max_iters, seed=self._seed(ff)
            )
            if inl.sum() < cfg.min_init_inliers:
                return False
            rel = decompose_essential(E, pa[inl], pb[inl], self.K)
        except PanosumError as exc:
            log.debug("initialization attempt at frame %d failed: %s", ff.frame_index, exc)
            return False

        xa, xb = to_normalized(pa, self.K), to_normalized(pb, self.K)
        X, ok = triangulate_points(Pose.identity(), rel, xa, xb)
        ok &= inl
        if ok.sum() < cfg.min_init_inliers // 2:
            return False

        poses = [Pose.identity(), rel]
        keep = []
        for i in np.nonzero(ok)[0]:
            errs = [reprojection_errors(P, self.K, X[i][None], p[i][None])[0] for P, p in zip(poses, (pa, pb))]
            if max(errs) > cfg.max_reprojection_px:
                continue
            rays = np.array([X[i], X[i] - rel.center])
            cos = rays[0] @ rays[1] / np.linalg.norm(rays[0]) / np.linalg.norm(rays[1])
            if cos >= self.cos_parallax:
                continue
            keep.append(i)
        if len(keep) < max(cfg.min_init_inliers // 2, cfg.min_localize_inliers):
            return False  # not enough well-conditioned structure to track against

        # re-anchor the gauge on the reference keyframe
        if len(self.keyframes) > 1:
            self.discarded_pre_init = len(self.keyframes) - 1
            ref_kf = Keyframe(
                0, ref.frame_index, None, ref.keypoints, ref.descriptors, ref.point_ids, ref.track_ids, ref.image
            )
            self.keyframes = [ref_kf]
            self.kf_stats = [self.kf_stats[ref.id]]
            self.kf_stats[0]["id"] = 0
            ref = ref_kf
        ref.pose = Pose.identity()
        kf = self._new_keyframe(ff, rel)
        for i in keep:
            self._add_point(X[i], {ref.id: int(matches.index_a[i]), kf.id: int(matches.index_b[i])})
        added = len(keep)
        self.initialized = True
        self.kf_stats.append(
            {"id": kf.id, "frame_index": kf.frame_index, "inliers": int(inl.sum()), "tracked": len(matches)}
        )
        log.info("map initialized at frame %d with %d points", ff.frame_index, added)
        return True

    def _initialize_any(self, ff: FrameFeatures, last_matches: features.Matches) -> bool:
        """Try every pose-less keyframe as the initialization partner, oldest first."""
        for cand in list(self.keyframes):
            if cand is self.keyframes[-1]:
                m = last_matches
            else:
                m = features.match_descriptors(
                    cand.descriptors, ff.descriptors, self.cfg.match_ratio, self.cfg.cross_check
                )
            if self.try_initialize(cand, ff, m):
                return True
        return False

    def _align_to(self, ref: Keyframe, ff: FrameFeatures, matches: features.Matches) -> features.Matches:
        """Snap matched keypoints of ``ff`` onto their patches in ``ref``.

        Matches whose patches still disagree after alignment (typically
        corners formed by an occluding contour, which slide as the camera
        moves) are dropped.
        """
        if ref.image is None or ff.image is None or len(matches) == 0:
            return matches
        xy = ff.keypoints.xy.copy()
        xy[matches.index_b], dis = features.refine_correspondences(
            ref.image,
            ff.image,
            ref.keypoints.xy[matches.index_a],
            xy[matches.index_b],
            self.cfg.patch_radius,
            return_dissimilarity=True,
        )
        ff.keypoints = features.Keypoints(xy, ff.keypoints.score, ff.keypoints.orientation)
        keep = dis <= self.cfg.max_patch_dissimilarity
        return features.Matches(matches.index_a[keep], matches.index_b[keep], matches.distance[keep])

    def _seed(self, ff: FrameFeatures) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, ff.frame_index])

    # -- tracking ----------------------------------------------------------
    def localize(self, ref: Keyframe, ff: FrameFeatures, matches: features.Matches) -> bool:
        cfg = self.cfg
        pids = ref.point_ids[matches.index_a]
        has = pids >= 0
        if has.sum() < cfg.min_localize_inliers:
            return False
        X = np.array([self.points[int(p)].position for p in pids[has]])
        x = ff.keypoints.xy[matches.index_b[has]]
        try:
            pose, inl, info = estimate_pose_pnp(
                X, x, self.K, initial_pose=ref.pose, threshold_px=cfg.pnp_threshold_px,
                seed=self._seed(ff), max_iters=cfg.ransac_max_iters,
            )
        except PanosumError as exc:
            log.debug("PnP failed at frame %d: %s", ff.frame_index, exc)
            return False
        if inl.sum() < cfg.min_localize_inliers:
            return False

        kf = self._new_keyframe(ff, pose)
        idx_a = matches.index_a[has][inl]
        idx_b = matches.index_b[has][inl]
        touched = set()
        for a, b in zip(idx_a, idx_b):
            pid = int(ref.point_ids[a])
            mp = self.points[pid]
            if kf.id in mp.observations:
                continue
            mp.observations[kf.id] = int(b)
            kf.point_ids[b] = pid
            touched.add(pid)
        for pid in sorted(touched):
            self._retriangulate(pid)

        self._extend_tracks(ref, kf, matches)
        window = [k.id for k in self.keyframes[-cfg.refine_window:]]
        self.refine(window, cfg.refine_rounds)
        self._cull(set(window))
        self.kf_stats.append(
            {"id": kf.id, "frame_index": kf.frame_index, "inliers": int(inl.sum()), "tracked": len(matches)}
        )
        return True

    def _relocalize(self, ff: FrameFeatures, skip: Keyframe) -> bool:
        """Localize against the posed keyframe sharing the most matched map points."""
        best = None
        for kf in self.keyframes:
            if kf is skip or kf.pose is None:
                continue
            m = features.match_descriptors(kf.descriptors, ff.descriptors, self.cfg.match_ratio, self.cfg.cross_check)
            support = int((kf.point_ids[m.index_a] >= 0).sum())
            if best is None or support > best[0]:
                best = (support, kf, m)
        if best is None or best[0] < self.cfg.min_localize_inliers:
            return False
        ok = self.localize(best[1], ff, best[2])
        if ok:
            log.info("relocalized frame %d against keyframe %d", ff.frame_index, best[1].id)
        return ok

    def _retriangulate(self, pid: int) -> None:
        mp = self.points[pid]
        kfs, px = self._observation_arrays(mp.observations)
        X = triangulate_multiview([kf.pose for kf in kfs], to_normalized(px, self.K))
        if X is not None and self._point_is_consistent(X, mp.observations):
            mp.position = X

    def _extend_tracks(self, ref: Keyframe, kf: Keyframe, matches: features.Matches) -> None:
        for a, b in zip(matches.index_a, matches.index_b):
            if ref.point_ids[a] >= 0 or kf.point_ids[b] >= 0:
                continue
            tid = int(ref.track_ids[a])
            if tid < 0:
                tid = self._next_track
                self._next_track += 1
                self.tracks[tid] = [(ref.id, int(a))]
                ref.track_ids[a] = tid
            self.tracks[tid].append((kf.id, int(b)))
            kf.track_ids[b] = tid
            self._try_triangulate_track(tid)

    def _try_triangulate_track(self, tid: int) -> None:
        obs = dict(self.tracks[tid])
        kfs, px = self._observation_arrays(obs)
        xn = to_normalized(px, self.K)
        first, last = kfs[0], kfs[-1]
        X, ok = triangulate_points(first.pose, last.pose, xn[:1], xn[-1:])
        if not ok[0] or not self._max_parallax_ok(X[0], [first, last]):
            return
        if len(kfs) > 2:
            Xm = triangulate_multiview([k.pose for k in kfs], xn)
            if Xm is None:
                return
            X = Xm[None]
        if not self._point_is_consistent(X[0], obs):
            return
        del self.tracks[tid]
        self._add_point(X[0], obs)

    def refine(self, kf_ids: list[int], rounds: int) -> None:
        """Alternate multi-view triangulation and pose-only Gauss-Newton.

        Keyframe 0 stays at the identity. If keyframe 1 is refined the whole
        reconstruction is rescaled so that its translation keeps unit norm.
        """
        ids = set(kf_ids)
        for _ in range(rounds):
            for pid in sorted(self.points):
                if ids.intersection(self.points[pid].observations):
                    self._retriangulate(pid)
            for kf_id in sorted(ids - {0}):
                kf = self.keyframes[kf_id]
                if kf.pose is None:
                    continue
                seen = kf.point_ids >= 0
                if seen.sum() < 6:
                    continue
                X = np.array([self.points[int(p)].position for p in kf.point_ids[seen]])
                x = kf.keypoints.xy[seen]
                err = reprojection_errors(kf.pose, self.K, X, x)
                good = err <= self.cfg.refine_inlier_px
                if good.sum() < 6:
                    continue
                kf.pose, _ = refine_pose(kf.pose, self.K, X[good], x[good])
            if 1 in ids:
                self._fix_gauge()

    def _fix_gauge(self) -> None:
        scale = 1.0 / np.linalg.norm(self.keyframes[1].pose.t)
        for kf in self.keyframes:
            if kf.pose is not None:
                kf.pose = Pose(kf.pose.R, kf.pose.t * scale)
        for mp in self.points.values():
            mp.position = mp.position * scale

    def _cull(self, kf_ids: set[int]) -> None:
        for pid in sorted(self.points):
            mp = self.points[pid]
            if not kf_ids.intersection(mp.observations):
                continue
            if len(mp.observations) < 2 or not self._point_is_consistent(mp.position, mp.observations):
                self._remove_point(pid)

    # -- main loop ---------------------------------------------------------
    def run(self, frames: list[Frame]) -> VOResult:
        cfg = self.cfg
        first = extract_features(frames[0], cfg)
        self._new_keyframe(first, None)
        self.kf_stats.append({"id": 0, "frame_index": first.frame_index, "inliers": 0, "tracked": 0})
        for frame in frames[1:]:
            ff = extract_features(frame, cfg)
            ref = self.keyframes[-1]
            matches = features.match_descriptors(ref.descriptors, ff.descriptors, cfg.match_ratio, cfg.cross_check)
            gap = ff.frame_index - ref.frame_index
            if not keyframe_decision(matches, ref.keypoints.xy, ff.keypoints.xy, gap, cfg):
                continue
            if cfg.align_patches:
                matches = self._align_to(ref, ff, matches)
            if not self.initialized:
                if self._initialize_any(ff, matches):
                    continue
                # before initialization only weak tracking opens a new (pose-less) keyframe
                if len(matches) < cfg.tracked_ratio * len(ref.keypoints):
                    self._new_keyframe(ff, None)
                    self.kf_stats.append(
                        {"id": len(self.keyframes) - 1, "frame_index": ff.frame_index, "inliers": 0, "tracked": len(matches)}
                    )
                continue
            if self.localize(ref, ff, matches) or self._relocalize(ff, ref):
                continue
            self.tracking_failures += 1

        if self.initialized and cfg.final_refine_rounds > 0:
            all_ids = [kf.id for kf in self.keyframes if kf.pose is not None]
            self.refine(all_ids, cfg.final_refine_rounds)
            self._cull(set(all_ids))
        diagnostics = {
            "initialized": self.initialized,
            "keyframes": self.kf_stats,
            "tracking_failures": self.tracking_failures,
            "discarded_pre_init_keyframes": self.discarded_pre_init,
            "map_points": len(self.points),
        }
        return VOResult(self.keyframes, self.points, self.initialized, diagnostics)


def run_vo(frames: list[Frame], intrinsics: CameraIntrinsics, config: VOConfig | None = None) -> VOResult:
    """Select keyframes and estimate their poses plus a sparse point map.

    When no keyframe pair passes the parallax gate the result is flagged
    ``initialized=False``: keyframes are still emitted, all without poses,
    and the map is empty.
    """
    if not frames:
        raise ValueError("run_vo needs at least one frame")
    return _Tracker(intrinsics, config or VOConfig()).run(frames)
