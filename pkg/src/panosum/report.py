"""Run report serialization and the keyframe cluster plot.

Both outputs are pure functions of the pipeline state, so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

SIGNIFICANT_DIGITS = 9

# fixed, colour-blind friendly first; unassigned keyframes are drawn gray
PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#bcbd22",
    "#17becf",
    "#393b79",
    "#637939",
    "#843c39",
)
UNASSIGNED_COLOR = "#9e9e9e"


def _round_floats(obj):
    """Copy of ``obj`` with floats cut to 9 significant digits (non-finite become None)."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        v = float(f"{v:.{SIGNIFICANT_DIGITS}g}")
        return 0.0 if v == 0 else v  # no "-0.0"
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round_floats(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_round_floats(report), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def emit_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def pose_entry(pose) -> dict | None:
    if pose is None:
        return None
    return {"q": [float(v) for v in pose.quaternion_wxyz()], "t": [float(v) for v in pose.t]}


def plot_coordinates(centers: np.ndarray | None, n: int) -> np.ndarray:
    """2-D positions for the plot.

    Camera centers go onto their first two principal components, each axis
    signed so its largest loading is positive. Without centers the keyframes
    are laid out on a square grid in id order.
    """
    if centers is None:
        cols = max(1, int(math.ceil(math.sqrt(n))))
        idx = np.arange(n)
        return np.column_stack([idx % cols, -(idx // cols)]).astype(np.float64)
    X = np.asarray(centers, dtype=np.float64)
    X = X - X.mean(axis=0)
    if len(X) < 2 or not np.any(np.abs(X) > 1e-12):
        return np.zeros((len(X), 2))
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    comps = Vt[:2]
    for k in range(len(comps)):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    Y = X @ comps.T
    if Y.shape[1] < 2:
        Y = np.column_stack([Y, np.zeros(len(Y))])
    return Y


def cluster_colors(keyframe_ids: list[int], clusters: list[list[int]]) -> dict[int, str]:
    colors = {k: UNASSIGNED_COLOR for k in keyframe_ids}
    for cid, members in enumerate(clusters):
        for k in members:
            colors[k] = PALETTE[cid % len(PALETTE)]
    return colors


def render_cluster_plot(
    keyframe_ids: list[int],
    centers: np.ndarray | None,
    clusters: list[list[int]],
    width: int = 560,
    height: int = 420,
) -> str:
    """SVG scatter of keyframes coloured by cluster, with a legend."""
    n = len(keyframe_ids)
    if n < 1:
        raise ValueError("need at least one keyframe to plot")
    xy = plot_coordinates(centers, n)
    margin, legend_w = 30.0, 130.0
    plot_w, plot_h = width - 2 * margin - legend_w, height - 2 * margin
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-12)
    scale = min(plot_w, plot_h) / span if np.any(hi > lo) else 0.0
    mid = (lo + hi) / 2.0
    cx0, cy0 = margin + plot_w / 2.0, margin + plot_h / 2.0
    colors = cluster_colors(keyframe_ids, clusters)
    title = "keyframe centers" if centers is not None else "keyframes (no poses, grid layout)"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{margin:.0f}" y="{margin - 10:.0f}" font-family="sans-serif" font-size="13">{escape(title)}</text>',
    ]
    for k, (x, y) in zip(keyframe_ids, xy):
        px = cx0 + (x - mid[0]) * scale
        py = cy0 - (y - mid[1]) * scale  # SVG y grows downward
        out.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="5" fill="{colors[k]}" stroke="#000000" stroke-width="0.5">'
            f"<title>keyframe {int(k)}</title></circle>"
        )
    entries = [(f"cluster {cid}", PALETTE[cid % len(PALETTE)]) for cid in range(len(clusters))]
    entries.append(("unassigned", UNASSIGNED_COLOR))
    lx = width - legend_w
    for row, (label, color) in enumerate(entries):
        ly = margin + 18 * row
        out.append(f'<circle cx="{lx + 6:.0f}" cy="{ly:.0f}" r="5" fill="{color}"/>')
        out.append(
            f'<text x="{lx + 16:.0f}" y="{ly + 4:.0f}" font-family="sans-serif" font-size="12">{escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
