"""Panorama stitching: cylindrical warp, homographies, alignment trees and blending."""

from .alignment import AlignmentTree, PairResult, build_alignment_trees
from .blending import feather_weights, gain_compensate, multiband_blend, solve_gains
from .cylindrical import cylindrical_forward, cylindrical_inverse, cylindrical_warp
from .homography import (
    apply_homography,
    estimate_homography_dlt,
    estimate_homography_ransac,
    normalize_homography,
    symmetric_transfer_error,
)
from .stitcher import Panorama, StitchConfig, stitch_cluster

__all__ = [
    "AlignmentTree",
    "PairResult",
    "Panorama",
    "StitchConfig",
    "apply_homography",
    "build_alignment_trees",
    "cylindrical_forward",
    "cylindrical_inverse",
    "cylindrical_warp",
    "estimate_homography_dlt",
    "estimate_homography_ransac",
    "feather_weights",
    "gain_compensate",
    "multiband_blend",
    "normalize_homography",
    "solve_gains",
    "stitch_cluster",
    "symmetric_transfer_error",
]
