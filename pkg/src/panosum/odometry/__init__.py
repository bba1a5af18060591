"""Monocular visual odometry: two-view geometry, PnP and the keyframe tracker."""

from .pnp import estimate_pose_pnp, project, refine_pose, reprojection_error, residuals_and_jacobian
from .pose import Pose, rotation_angle, skew, so3_exp
from .tracker import Keyframe, MapPoint, VOConfig, VOResult, keyframe_decision, run_vo
from .two_view import decompose_essential, estimate_essential_ransac, triangulate

__all__ = [
    "Keyframe",
    "MapPoint",
    "Pose",
    "VOConfig",
    "VOResult",
    "decompose_essential",
    "estimate_essential_ransac",
    "estimate_pose_pnp",
    "keyframe_decision",
    "project",
    "refine_pose",
    "reprojection_error",
    "residuals_and_jacobian",
    "rotation_angle",
    "run_vo",
    "skew",
    "so3_exp",
    "triangulate",
]
