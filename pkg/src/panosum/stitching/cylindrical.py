"""Cylindrical projection of pinhole images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import InvalidValue


def cylindrical_forward(x, y, focal: float, center) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole pixel to cylinder pixel; the principal point is a fixed point."""
    cx, cy = center
    dx = np.asarray(x, dtype=np.float64) - cx
    dy = np.asarray(y, dtype=np.float64) - cy
    u = focal * np.arctan(dx / focal)
    v = focal * dy / np.sqrt(dx * dx + focal * focal)
    return u + cx, v + cy


def cylindrical_inverse(u, v, focal: float, center) -> tuple[np.ndarray, np.ndarray]:
    """Cylinder pixel back to pinhole pixel (exact inverse of the forward map)."""
    cx, cy = center
    theta = (np.asarray(u, dtype=np.float64) - cx) / focal
    dx = focal * np.tan(theta)
    dy = (np.asarray(v, dtype=np.float64) - cy) / np.cos(theta)
    return dx + cx, dy + cy


def sample_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples at float coordinates; outside points read 0.

    Works per channel and returns float64 with the sample grid's shape (plus
    the channel axis for color images).
    """
    img = np.asarray(image, dtype=np.float64)
    coords = np.array([y, x])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
    return np.stack(
        [ndimage.map_coordinates(img[..., c], coords, order=1, mode="constant", cval=0.0) for c in range(img.shape[2])],
        axis=-1,
    )


def inside(x: np.ndarray, y: np.ndarray, width: int, height: int) -> np.ndarray:
    """Points whose bilinear footprint lies within the image."""
    return (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)


def cylindrical_warp(image: np.ndarray, focal_px: float, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Warp ``image`` onto a cylinder of radius ``focal_px``.

    The output has the input's shape and keeps the principal point in
    place. Returns ``(warped, valid)`` where ``valid`` marks output pixels
    whose preimage lies inside the source image.
    """
    if not (np.isfinite(focal_px) and focal_px > 0):
        raise InvalidValue(f"focal length must be positive, got {focal_px!r}")
    h, w = image.shape[:2]
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        # angles beyond +-90 degrees have no preimage
        ok_angle = np.abs((uu - center[0]) / focal_px) < np.pi / 2
        x, y = cylindrical_inverse(uu, vv, focal_px, center)
    valid = ok_angle & inside(x, y, w, h)
    x = np.where(valid, x, -10.0)
    y = np.where(valid, y, -10.0)
    warped = sample_bilinear(image, x, y)
    warped[~valid] = 0.0
    out = np.clip(np.rint(warped), 0, 255).astype(np.uint8)
    return out, valid
