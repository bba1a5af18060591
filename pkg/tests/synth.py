"""Ray-cast synthetic scenes with known camera poses (test oracle).

The world is a textured box room containing textured boxes. Surface
texture is a solid (3-D) value-noise field, so every surface point looks
the same from every viewpoint and rendered features are genuine
projections of fixed world points.
"""

from __future__ import annotations

import numpy as np

from panosum.media_io import CameraIntrinsics
from panosum.odometry.pose import Pose, rot_y

WIDTH, HEIGHT = 320, 240
INTRINSICS = CameraIntrinsics(300.0, 300.0, 159.5, 119.5)


class Scene:
    def __init__(
        self, seed: int = 0, n_boxes: int = 60, room=(8.0, 3.0, 8.0), lattice: int = 128, radius=(2.5, 5.5),
        blocky: float = 0.0,
        half_size=(0.2, 0.55),
        wall_level: float = 120.0,
    ):
        self.blocky = blocky
        self.wall_level = wall_level
        rng = np.random.default_rng(seed)
        self.room_lo = -np.asarray(room, dtype=np.float64)
        self.room_hi = np.asarray(room, dtype=np.float64)
        boxes = []
        while len(boxes) < n_boxes:
            angle = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(*radius)
            center = np.array([dist * np.sin(angle), rng.uniform(-1.5, 1.5), dist * np.cos(angle)])
            half = rng.uniform(*half_size, size=3)
            boxes.append((center - half, center + half))
        self.box_lo = np.array([b[0] for b in boxes])
        self.box_hi = np.array([b[1] for b in boxes])
        self.lattice = rng.random((lattice, lattice, lattice)).astype(np.float32)
        self.lattice2 = rng.random((lattice, lattice, lattice)).astype(np.float32)

    def _noise(self, lattice: np.ndarray, p: np.ndarray, cell: float) -> np.ndarray:
        n = lattice.shape[0]
        q = p / cell
        i0 = np.floor(q).astype(np.int64)
        f = q - i0
        f = f * f * (3 - 2 * f)
        out = np.zeros(len(p))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1 - f[:, 2]
                    v = lattice[(i0[:, 0] + dx) % n, (i0[:, 1] + dy) % n, (i0[:, 2] + dz) % n]
                    out += wx * wy * wz * v
        return out

    def texture(self, p: np.ndarray) -> np.ndarray:
        if self.blocky:
            # piecewise-constant voxels: texture corners are fixed 3-D points
            n = self.lattice.shape[0]
            i = np.floor(p / self.blocky).astype(np.int64) % n
            return self.lattice[i[:, 0], i[:, 1], i[:, 2]]
        v = 0.5 * self._noise(self.lattice, p, 0.1) + 0.5 * self._noise(self.lattice2, p, 0.035)
        return 0.5 + 0.5 * np.tanh(6.0 * (v - 0.5))

    def render(
        self,
        pose: Pose,
        intrinsics: CameraIntrinsics = INTRINSICS,
        width: int = WIDTH,
        height: int = HEIGHT,
        rgb: bool = False,
        return_depth: bool = False,
        supersample: int = 2,
    ):
        """Ray-cast one view; ``supersample`` x ``supersample`` rays per pixel are averaged."""
        ss = supersample
        offs = (np.arange(ss) + 0.5) / ss - 0.5
        u = (np.arange(width)[:, None] + offs[None, :]).ravel()
        v = (np.arange(height)[:, None] + offs[None, :]).ravel()
        W, H = len(u), len(v)
        uu, vv = np.meshgrid(u, v)
        d_cam = np.stack(
            [(uu.ravel() - intrinsics.cx) / intrinsics.fx, (vv.ravel() - intrinsics.cy) / intrinsics.fy, np.ones(uu.size)],
            axis=1,
        )
        d = d_cam @ pose.R  # rows: R^T d
        o = pose.center
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (self.room_lo - o) * inv
            t2 = (self.room_hi - o) * inv
            t_best = np.nanmin(np.maximum(t1, t2), axis=1)
            on_box = np.zeros(len(d), dtype=bool)
            for lo, hi in zip(self.box_lo, self.box_hi):
                idx = self._box_rays(lo, hi, pose, intrinsics, u, v)
                if idx is None:
                    continue
                b1 = (lo - o) * inv[idx]
                b2 = (hi - o) * inv[idx]
                t_near = np.nanmax(np.minimum(b1, b2), axis=1)
                t_far = np.nanmin(np.maximum(b1, b2), axis=1)
                hit = (t_near <= t_far) & (t_near > 1e-6) & (t_near < t_best[idx])
                t_best[idx[hit]] = t_near[hit]
                on_box[idx[hit]] = True
        p = o + t_best[:, None] * d
        # walls are flat and near the mean box brightness so that features come
        # from box interiors rather than from silhouettes
        value = np.full(len(d), 0.0)
        value[on_box] = 30.0 + 200.0 * self.texture(p[on_box])
        value[~on_box] = self.wall_level + 20.0 * self._noise(self.lattice, p[~on_box], 0.6)

        def pool(a):
            return a.reshape(height, ss, width, ss).mean(axis=(1, 3))

        gray = pool(value.reshape(H, W))
        img = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
        if rgb:
            tint = pool(self._noise(self.lattice2, p * 0.3 + 7.0, 0.5).reshape(H, W))
            r = np.clip(np.rint(gray * (0.85 + 0.3 * tint)), 0, 255)
            b = np.clip(np.rint(gray * (1.15 - 0.3 * tint)), 0, 255)
            img = np.stack([r, img, b], axis=2).astype(np.uint8)
        if return_depth:
            return img, pool(t_best.reshape(H, W))  # rays have unit camera z
        return img

    @staticmethod
    def _box_rays(lo, hi, pose, intrinsics, u, v):
        """Flat indices of the rays whose pixel lies in the box's projected bounding rectangle."""
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        c = pose.transform(corners)
        W = len(u)
        if (c[:, 2] <= 1e-3).all():
            return None
        if (c[:, 2] <= 1e-3).any():
            return np.arange(W * len(v))
        px = intrinsics.fx * c[:, 0] / c[:, 2] + intrinsics.cx
        py = intrinsics.fy * c[:, 1] / c[:, 2] + intrinsics.cy
        cols = np.nonzero((u >= px.min() - 1) & (u <= px.max() + 1))[0]
        rows = np.nonzero((v >= py.min() - 1) & (v <= py.max() + 1))[0]
        if len(cols) == 0 or len(rows) == 0:
            return None
        return (rows[:, None] * W + cols[None, :]).ravel()


def look_pose(center, yaw: float) -> Pose:
    """Camera at ``center`` looking along +z rotated by ``yaw`` about the vertical."""
    R_wc = rot_y(yaw)  # camera-to-world
    return Pose.from_center(R_wc.T, center)


def dolly_poses(n: int = 60, span: float = 1.6) -> list[Pose]:
    xs = np.linspace(-span / 2, span / 2, n)
    return [look_pose([x, 0.0, 0.0], 0.0) for x in xs]


def orbit_poses(n: int = 120, radius: float = 1.0, arc_deg: float = 90.0) -> list[Pose]:
    """Camera on a horizontal circle, looking radially outward."""
    phis = np.radians(np.linspace(0.0, arc_deg, n))
    return [look_pose([radius * np.sin(p), 0.0, radius * np.cos(p)], p) for p in phis]


def two_arc_poses(n_per_arc: int = 30, separation: float = 1.5, travel: float = 0.2, sweep: float = 0.3) -> list[Pose]:
    """Two short panning walks at distinct standpoints, joined by a cut.

    Along each arc the camera drifts ``travel`` sideways while its yaw
    sweeps ``sweep`` radians. The standpoints are ``separation`` apart and
    their views overlap, so tracking can resume against the map after the cut.
    """
    poses = []
    steps = np.linspace(-0.5, 0.5, n_per_arc)
    for cx, yaw0 in ((-separation / 2, -0.1), (separation / 2, 0.1)):
        for s in steps:
            poses.append(look_pose([cx + travel * s, 0.0, 0.0], yaw0 + sweep * s))
    return poses


def render_frames(
    poses: list[Pose], seed: int = 0, rgb: bool = False, intrinsics: CameraIntrinsics = INTRINSICS, **scene_kwargs
):
    from panosum.media_io import Frame

    scene = Scene(seed, **scene_kwargs)
    return [Frame(i, scene.render(p, intrinsics, rgb=rgb), f"frame_{i:04d}.png") for i, p in enumerate(poses)]


def reference_image(size: int = 512, seed: int = 0) -> np.ndarray:
    """Float RGB test picture: smooth multi-scale color noise under sharp discs and boxes."""
    from scipy import ndimage

    r = np.random.default_rng(seed)
    img = np.zeros((size, size, 3))
    for sigma in (24, 8, 3):
        img += ndimage.gaussian_filter(r.normal(size=(size, size, 3)), (sigma, sigma, 0)) * sigma
    img = 128 + 40 * (img - img.mean()) / img.std()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(400):
        cx, cy = r.uniform(0, size, 2)
        rad = r.uniform(3, 18)
        color = r.uniform(0, 255, 3)
        if r.random() < 0.5:
            m = (xx - cx) ** 2 + (yy - cy) ** 2 < rad**2
        else:
            m = (np.abs(xx - cx) < rad) & (np.abs(yy - cy) < rad * r.uniform(0.3, 1.0))
        img[m] = color
    return np.clip(ndimage.gaussian_filter(img, (1.0, 1.0, 0)), 0, 255)


def crop_transform(tx: float, ty: float, angle_deg: float, size: int) -> np.ndarray:
    """Affine map from crop pixels to source pixels: turn about the crop center, then shift."""
    c = (size - 1) / 2.0
    a = np.radians(angle_deg)
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    A = np.eye(3)
    A[:2, :2] = R
    A[:2, 2] = np.array([tx + c, ty + c]) - R @ [c, c]
    return A


def resample(source: np.ndarray, A: np.ndarray, width: int, height: int, origin=(0.0, 0.0)) -> np.ndarray:
    """Bilinear samples of ``source`` at ``A @ (u + ox, v + oy, 1)`` over a width x height grid."""
    from panosum.stitching.cylindrical import sample_bilinear

    uu, vv = np.meshgrid(np.arange(width) + origin[0], np.arange(height) + origin[1])
    p = np.column_stack([uu.ravel(), vv.ravel(), np.ones(uu.size)]) @ A.T
    return sample_bilinear(source, p[:, 0].reshape(height, width), p[:, 1].reshape(height, width))


def crop(source: np.ndarray, tx: float, ty: float, angle_deg: float = 0.0, size: int = 256):
    """(uint8 crop, crop-to-source transform)."""
    A = crop_transform(tx, ty, angle_deg, size)
    return np.clip(np.rint(resample(source, A, size, size)), 0, 255).astype(np.uint8), A


def panorama_psnr(source: np.ndarray, panorama, transforms: dict, erode: int = 3) -> float:
    """PSNR of a panorama against the source over its eroded coverage.

    The canvas lives in the reference crop's frame, so canvas pixels are
    carried to the source through that crop's transform.
    """
    from scipy import ndimage

    h, w = panorama.canvas.shape[:2]
    truth = resample(source, transforms[panorama.reference_id], w, h, panorama.origin)
    m = ndimage.binary_erosion(panorama.coverage, iterations=erode)
    mse = np.mean((panorama.canvas.astype(np.float64) - truth)[m] ** 2)
    return float(10 * np.log10(255.0**2 / mse))
