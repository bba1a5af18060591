"""Command line entry point: ``panosum run``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import PanosumError
from .pipeline import PipelineConfig, load_config_file, run_pipeline

# flag destination -> PipelineConfig field
_OVERRIDES = {
    "seed": "seed",
    "sigma_pos": "sigma_pos",
    "sigma_rot": "sigma_rot",
    "min_cluster_size": "min_cluster_size",
    "blend_levels": "blend_levels",
    "jobs": "jobs",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panosum", description="Summarize a frame sequence as panoramas.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the full pipeline")
    run.add_argument("--frames", required=True, help="directory of frame images (PNG, PPM or PGM)")
    run.add_argument("--intrinsics", required=True, help="JSON file with fx, fy, cx, cy")
    run.add_argument("--out", required=True, help="output directory (replaced atomically)")
    run.add_argument("--config", help="JSON file with PipelineConfig fields; flags take precedence")
    run.add_argument("--seed", type=int)
    run.add_argument("--sigma-pos", type=float)
    run.add_argument("--sigma-rot", type=float)
    run.add_argument("--min-cluster-size", type=int)
    run.add_argument("--blend-levels", type=int)
    run.add_argument("--no-cylindrical", action="store_true", help="stitch without the cylindrical pre-warp")
    run.add_argument("--jobs", type=int, help="clusters stitched concurrently (default: CPU count)")
    run.add_argument("--timings", action="store_true", help="record per-phase wall times in the report")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    values = load_config_file(args.config) if args.config else {}
    for dest, name in _OVERRIDES.items():
        v = getattr(args, dest)
        if v is not None:
            values[name] = v
    if args.no_cylindrical:
        values["cylindrical"] = False
    if args.timings:
        values["record_timings"] = True
    values["frames_dir"] = args.frames
    values["intrinsics_path"] = args.intrinsics
    values["output_dir"] = args.out
    return PipelineConfig.from_mapping(values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = config_from_args(args)
        report = run_pipeline(cfg)
    except (OSError, PanosumError, ValueError) as exc:
        print(f"panosum: error: {exc}", file=sys.stderr)
        return 1
    n_pano = sum(len(c["panoramas"]) for c in report["clusters"])
    print(
        f"{len(report['keyframes'])} keyframes, {len(report['clusters'])} clusters, "
        f"{n_pano} panoramas, {len(report['unassigned'])} unassigned -> {cfg.output_dir}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
