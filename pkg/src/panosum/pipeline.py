"""End-to-end run: keyframes and poses, viewpoint clusters, one panorama per component."""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from pathlib import Path

import numpy as np

from . import features
from .clustering import (
    AffinityGraph,
    ClusterParams,
    appearance_affinity_graph,
    build_affinity_graph,
    extract_dominant_sets,
)
from .errors import InvalidValue, PanosumError
from .media_io import load_frame_sequence, load_intrinsics, write_image
from .odometry import VOConfig, run_vo
from .report import emit_report, pose_entry, render_cluster_plot
from .stitching import StitchConfig, estimate_homography_ransac, stitch_cluster

log = logging.getLogger(__name__)

_VO = VOConfig()
_CL = ClusterParams()
_ST = StitchConfig()


@dataclass
class PipelineConfig:
    frames_dir: str
    intrinsics_path: str
    output_dir: str
    seed: int = 0
    pattern_seed: int = _VO.pattern_seed
    # keyframe selection
    displacement_px: float = _VO.displacement_px
    tracked_ratio: float = _VO.tracked_ratio
    max_frame_gap: int = _VO.max_frame_gap
    essential_threshold_px: float = _VO.essential_threshold_px
    pnp_threshold_px: float = _VO.pnp_threshold_px
    # clustering
    sigma_pos: float = _CL.sigma_pos
    sigma_rot: float = _CL.sigma_rot
    support_threshold: float = _CL.support_threshold
    min_cohesiveness: float = _CL.min_cohesiveness
    min_cluster_size: int = _CL.min_cluster_size
    # stitching
    cylindrical: bool = _ST.cylindrical
    blend_levels: int = _ST.blend_levels
    ransac_threshold_px: float = _ST.ransac_threshold_px
    min_edge_inliers: int = _ST.min_edge_inliers
    jobs: int | None = None
    record_timings: bool = False
    frame_glob: str = "*"

    def __post_init__(self):
        positive = (
            "displacement_px",
            "tracked_ratio",
            "max_frame_gap",
            "essential_threshold_px",
            "pnp_threshold_px",
            "sigma_pos",
            "sigma_rot",
            "support_threshold",
            "min_cohesiveness",
            "min_cluster_size",
            "blend_levels",
            "ransac_threshold_px",
            "min_edge_inliers",
        )
        for name in positive:
            v = getattr(self, name)
            if isinstance(v, bool) or not np.isfinite(v) or v <= 0:
                raise InvalidValue(f"{name} must be positive, got {v!r}")
        if self.jobs is not None and self.jobs < 1:
            raise InvalidValue("jobs must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidValue(f"unknown config fields: {', '.join(unknown)}")
        return cls(**values)

    def vo_config(self) -> VOConfig:
        return VOConfig(
            displacement_px=self.displacement_px,
            tracked_ratio=self.tracked_ratio,
            max_frame_gap=int(self.max_frame_gap),
            essential_threshold_px=self.essential_threshold_px,
            pnp_threshold_px=self.pnp_threshold_px,
            pattern_seed=int(self.pattern_seed),
            seed=self.seed,
        )

    def cluster_params(self) -> ClusterParams:
        return ClusterParams(
            sigma_pos=self.sigma_pos,
            sigma_rot=self.sigma_rot,
            support_threshold=self.support_threshold,
            min_cohesiveness=self.min_cohesiveness,
            min_cluster_size=int(self.min_cluster_size),
        )

    def stitch_config(self) -> StitchConfig:
        return StitchConfig(
            cylindrical=self.cylindrical,
            blend_levels=int(self.blend_levels),
            ransac_threshold_px=self.ransac_threshold_px,
            min_edge_inliers=int(self.min_edge_inliers),
            pattern_seed=int(self.pattern_seed),
            seed=self.seed,
        )

    def echo(self) -> dict:
        """Effective settings for the report.

        The output directory is left out so that runs written to different
        places still produce identical reports.
        """
        d = asdict(self)
        d.pop("output_dir")
        return d


def appearance_graph(keyframes, cfg: PipelineConfig) -> AffinityGraph:
    """Fallback affinity from homography-verified descriptor matches."""
    n = len(keyframes)
    counts = np.zeros((n, n))
    rng = np.random.default_rng(cfg.seed)
    for i, j in combinations(range(n), 2):
        a, b = keyframes[i], keyframes[j]
        if len(a.keypoints) < 4 or len(b.keypoints) < 4:
            continue
        m = features.match_descriptors(a.descriptors, b.descriptors, _VO.match_ratio, True)
        if len(m) < 4:
            continue
        try:
            _, inl = estimate_homography_ransac(
                a.keypoints.xy[m.index_a], b.keypoints.xy[m.index_b], cfg.ransac_threshold_px, seed=rng
            )
        except PanosumError:
            continue
        counts[i, j] = counts[j, i] = inl.sum()
    return appearance_affinity_graph(counts, [len(k.keypoints) for k in keyframes], [k.id for k in keyframes])


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    def __call__(self, name: str, t0: float) -> None:
        self.ms[name] = (time.perf_counter() - t0) * 1000.0


def _cluster_keyframes(vo, cfg: PipelineConfig):
    """Graph over keyframes (pose-based when possible) and its dominant sets."""
    params = cfg.cluster_params()
    posed = [k for k in vo.keyframes if k.pose is not None]
    if vo.initialized and posed:
        graph = build_affinity_graph([k.pose for k in posed], [k.id for k in posed], params)
        clusters, unassigned = extract_dominant_sets(graph, params)
        # a keyframe without a pose cannot be placed in the pose graph
        unassigned = sorted(unassigned + [k.id for k in vo.keyframes if k.pose is None])
    else:
        graph = appearance_graph(vo.keyframes, cfg)
        clusters, unassigned = extract_dominant_sets(graph, params)
    return graph, clusters, unassigned


def _publish(tmp: Path, out: Path) -> None:
    """Move the finished temp directory into place, replacing an older run."""
    if out.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{out.name}.old-", dir=out.parent))
        os.replace(out, old / "previous")
        os.replace(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, out)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every phase and write panoramas, ``report.json`` and ``clusters.svg``.

    Inputs are loaded before anything is written. All outputs are built in a
    temporary sibling of ``output_dir`` that is renamed into place only after
    everything succeeded. Returns the report dictionary.
    """
    out = Path(cfg.output_dir)
    if out.exists() and not out.is_dir():
        raise NotADirectoryError(f"output path exists and is not a directory: {out}")
    timer = _Timer()

    t0 = time.perf_counter()
    intrinsics = load_intrinsics(cfg.intrinsics_path)
    frames = load_frame_sequence(cfg.frames_dir, cfg.frame_glob)
    timer("load", t0)
    log.info("loaded %d frames", len(frames))

    t0 = time.perf_counter()
    vo = run_vo(frames, intrinsics, cfg.vo_config())
    timer("visual_odometry", t0)
    flags = [] if vo.initialized else ["InitializationFailure"]
    if not vo.initialized:
        log.warning("visual odometry did not initialize; clustering on appearance")

    t0 = time.perf_counter()
    graph, clusters, unassigned = _cluster_keyframes(vo, cfg)
    timer("clustering", t0)
    log.info("%d clusters, %d unassigned keyframes", len(clusters), len(unassigned))

    by_id = {k.id: k for k in vo.keyframes}
    index_of = {kid: i for i, kid in enumerate(graph.node_ids)}
    stitch_cfg = cfg.stitch_config()

    def stitch(cid: int):
        members = sorted(clusters[cid].members)
        images = {k: frames[by_id[k].frame_index].image for k in members}
        idx = [index_of[k] for k in members]
        return stitch_cluster(images, intrinsics, cid, stitch_cfg, graph.A[np.ix_(idx, idx)])

    t0 = time.perf_counter()
    jobs = cfg.jobs or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        panoramas = list(pool.map(stitch, range(len(clusters))))
    timer("stitching", t0)

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        t0 = time.perf_counter()
        cluster_entries = []
        for cid, (cluster, panos) in enumerate(zip(clusters, panoramas)):
            names = []
            for comp, pano in enumerate(panos):
                name = f"panorama_{cid}_{comp}.png"
                write_image(tmp / name, pano.canvas)
                names.append(name)
            cluster_entries.append(
                {
                    "id": cid,
                    "members": sorted(cluster.members),
                    "cohesiveness": cluster.cohesiveness,
                    "panoramas": names,
                }
            )
        for kid in unassigned:
            write_image(tmp / f"unassigned_{kid}.png", frames[by_id[kid].frame_index].image)

        ids = [k.id for k in vo.keyframes]
        centers = None
        if all(k.pose is not None for k in vo.keyframes):
            centers = np.array([k.pose.center for k in vo.keyframes])
        svg = render_cluster_plot(ids, centers, [sorted(c.members) for c in clusters])
        (tmp / "clusters.svg").write_text(svg, encoding="utf-8")
        timer("output", t0)

        report = {
            "config": cfg.echo(),
            "keyframes": [
                {"id": k.id, "frame_index": k.frame_index, "pose": pose_entry(k.pose)} for k in vo.keyframes
            ],
            "clusters": cluster_entries,
            "unassigned": sorted(unassigned),
            "diagnostics": {
                "timings_ms": dict(timer.ms) if cfg.record_timings else {},
                "map_points": len(vo.map_points),
                "vo_initialized": bool(vo.initialized),
                "flags": flags,
                "affinity": graph.mode,
                "scene_scale": graph.scene_scale,
                "frames": len(frames),
                "tracking_failures": int(vo.diagnostics.get("tracking_failures", 0)),
                "discarded_pre_init_keyframes": int(vo.diagnostics.get("discarded_pre_init_keyframes", 0)),
            },
        }
        emit_report(report, tmp / "report.json")
        _publish(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return report


def load_config_file(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidValue(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidValue("config file must hold a JSON object")
    return doc
