"""Feather weights, gain compensation and Laplacian-pyramid blending."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DimensionMismatch, InvalidValue

PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def feather_weights(masks: list[np.ndarray]) -> list[np.ndarray]:
    """Distance-to-border weights normalized to sum to one wherever any mask is set."""
    raw = []
    for m in masks:
        padded = np.pad(np.asarray(m, dtype=bool), 1)
        raw.append(ndimage.distance_transform_edt(padded)[1:-1, 1:-1])
    total = np.sum(raw, axis=0)
    out = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for r in raw:
            out.append(np.where(total > 0, r / total, 0.0))
    return out


def solve_gains(mu: np.ndarray, n_overlap: np.ndarray | None = None, lam: float = 0.01, clamp=(0.5, 2.0)) -> np.ndarray:
    """Gains minimizing sum over overlapping pairs of (g_i mu_ij - g_j mu_ji)^2 + lam sum (g_i - 1)^2.

    ``mu[i, j]`` is the mean intensity of image ``i`` over its overlap with
    image ``j``, as a fraction of full scale; pairs with ``n_overlap[i, j] == 0`` (or NaN means) are ignored.
    """
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.shape[0]
    if n_overlap is None:
        n_overlap = np.isfinite(mu) & np.isfinite(mu.T)
    M = lam * np.eye(n)
    rhs = lam * np.ones(n)
    for i in range(n):
        for j in range(i + 1, n):
            if not n_overlap[i, j] or not (np.isfinite(mu[i, j]) and np.isfinite(mu[j, i])):
                continue
            a, b = mu[i, j], mu[j, i]
            # d/dg of (g_i a - g_j b)^2
            M[i, i] += a * a
            M[j, j] += b * b
            M[i, j] -= a * b
            M[j, i] -= a * b
    g = np.linalg.solve(M, rhs)
    return np.clip(g, *clamp)


def _luma(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img if img.ndim == 2 else img @ np.array([0.299, 0.587, 0.114])


def gain_compensate(images: list[np.ndarray], masks: list[np.ndarray], lam: float = 0.01) -> np.ndarray:
    """One multiplicative gain per image from mean intensities over pairwise overlaps."""
    n = len(images)
    if n == 0:
        raise InvalidValue("need at least one image")
    luma = [_luma(im) for im in images]
    masks = [np.asarray(m, dtype=bool) for m in masks]
    mu = np.full((n, n), np.nan)
    overl = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            both = masks[i] & masks[j]
            if both.any():
                mu[i, j] = luma[i][both].mean()
                mu[j, i] = luma[j][both].mean()
                overl[i, j] = overl[j, i] = True
    # means are taken as fractions of full scale so that lam keeps the same
    # meaning whatever the image brightness
    return solve_gains(mu / 255.0, overl, lam)


def _blur(a: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(a, PYRAMID_KERNEL, axis=0, mode="reflect")
    return ndimage.correlate1d(out, PYRAMID_KERNEL, axis=1, mode="reflect")


def pyr_down(a: np.ndarray) -> np.ndarray:
    return _blur(a)[::2, ::2]


def pyr_up(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    up = np.zeros(shape[:2] + a.shape[2:], dtype=np.float64)
    up[::2, ::2] = a
    return 4.0 * _blur(up)


def gaussian_pyramid(a: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [np.asarray(a, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(pyr_down(pyr[-1]))
    return pyr


def laplacian_pyramid(a: np.ndarray, levels: int) -> list[np.ndarray]:
    g = gaussian_pyramid(a, levels)
    lap = [g[k] - pyr_up(g[k + 1], g[k].shape) for k in range(levels - 1)]
    lap.append(g[-1])
    return lap


def collapse(lap: list[np.ndarray]) -> np.ndarray:
    out = lap[-1]
    for band in reversed(lap[:-1]):
        out = band + pyr_up(out, band.shape)
    return out


def multiband_blend(images: list[np.ndarray], weights: list[np.ndarray], levels: int = 4) -> np.ndarray:
    """Blend per frequency band; each band uses correspondingly smoothed weights.

    ``levels = 1`` is plain weighted averaging. Pixels covered by no image
    come out 0. The result is rounded to uint8.
    """
    if levels < 1:
        raise InvalidValue("levels must be >= 1")
    if len(images) == 0 or len(images) != len(weights):
        raise DimensionMismatch("need one weight map per image")
    shape = np.asarray(images[0]).shape
    for im, w in zip(images, weights):
        if np.asarray(im).shape != shape or np.asarray(w).shape != shape[:2]:
            raise DimensionMismatch("all images and weights must share the canvas size")
    # the pyramid cannot go below one pixel
    max_levels = 1 + int(np.floor(np.log2(max(min(shape[:2]), 1))))
    levels = min(levels, max_levels)
    coverage = np.sum([np.asarray(w, dtype=np.float64) for w in weights], axis=0) > 0
    blended = None
    for im, w in zip(images, weights):
        lap = laplacian_pyramid(np.asarray(im, dtype=np.float64), levels)
        wp = gaussian_pyramid(np.asarray(w, dtype=np.float64), levels)
        if len(shape) == 3:
            wp = [x[..., None] for x in wp]
        contrib = [b * ww for b, ww in zip(lap, wp)]
        blended = contrib if blended is None else [x + y for x, y in zip(blended, contrib)]
    # renormalize each band by the smoothed weight total (1 away from coverage edges)
    totals = gaussian_pyramid(coverage.astype(np.float64), levels)
    for k in range(levels):
        t = totals[k][..., None] if len(shape) == 3 else totals[k]
        blended[k] = np.where(t > 1e-12, blended[k] / np.maximum(t, 1e-12), 0.0)
    out = collapse(blended)
    out[~coverage] = 0.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
