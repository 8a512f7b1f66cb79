"""Ray dataset built from Gaussian pyramids of the input views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import Camera, Ray, generate_rays
from ..image import ImageBuffer
from .pyramid import KERNEL_SIZES, PyramidLevel, build_pyramid

MAX_SIDE = 360


@dataclass
class RayRecords:
    ray: Ray
    roughness: np.ndarray
    target: np.ndarray


class RayDataset:
    """One record per valid pixel per pyramid level.

    Records are stored as ``(view, level, pixel)`` indices into the pyramids
    and materialized on demand.
    """

    def __init__(self, pyramids: list[list[PyramidLevel]], cameras: list[Camera]):
        self.pyramids = pyramids
        self.cameras = cameras
        idx = []
        for v, levels in enumerate(pyramids):
            for lvl, level in enumerate(levels):
                pix = np.flatnonzero(level.image.valid.ravel())
                idx.append(np.stack([np.full_like(pix, v), np.full_like(pix, lvl), pix], -1))
        self.index = np.concatenate(idx).astype(np.int64) if idx else np.zeros((0, 3), np.int64)

    def __len__(self) -> int:
        return len(self.index)

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(level.kernel_size for level in self.pyramids[0]) if self.pyramids else ()

    def records(self, rows: np.ndarray) -> RayRecords:
        rows = np.asarray(rows)
        sel = self.index[rows]
        origins = np.empty((len(rows), 3))
        dirs = np.empty((len(rows), 3))
        radii = np.empty(len(rows))
        rough = np.empty(len(rows))
        target = np.empty((len(rows), 3))
        for v in np.unique(sel[:, 0]):
            cam = self.cameras[v]
            mv = sel[:, 0] == v
            pix = sel[mv, 2]
            uv = np.stack([pix % cam.width + 0.5, pix // cam.width + 0.5], -1)
            rays = generate_rays(cam, uv)
            origins[mv], dirs[mv], radii[mv] = rays.origin, rays.direction, rays.base_radius
            levels = self.pyramids[v]
            for lvl in np.unique(sel[mv, 1]):
                ml = mv & (sel[:, 1] == lvl)
                data = levels[lvl].image.data.reshape(-1, levels[lvl].image.channels)
                target[ml] = data[sel[ml, 2], :3]
                rough[ml] = levels[lvl].roughness
        return RayRecords(Ray(origins, dirs, radii), rough, target)

    def sample(self, rng: np.random.Generator, batch: int) -> RayRecords:
        """Uniform sampling with replacement."""
        return self.records(rng.integers(0, len(self), size=batch))


def downscale(img: ImageBuffer, camera: Camera, max_side: int = MAX_SIDE) -> tuple[ImageBuffer, Camera]:
    """Integer box downsampling until the longest side is at most ``max_side``."""
    f = int(np.ceil(max(img.width, img.height) / max_side))
    if f <= 1:
        return img, camera
    h, w = img.height // f, img.width // f
    data = img.data[: h * f, : w * f].reshape(h, f, w, f, -1).mean((1, 3))
    valid = img.valid[: h * f, : w * f].reshape(h, f, w, f).all((1, 3))
    cam = Camera(camera.fx / f, camera.fy / f, camera.cx / f, camera.cy / f,
                 camera.rotation, camera.translation, w, h)
    return ImageBuffer(data, valid), cam


def build_ray_dataset(images: list[ImageBuffer], cameras: list[Camera],
                      kernel_sizes=KERNEL_SIZES) -> RayDataset:
    if len(images) != len(cameras):
        raise ValueError(f"{len(images)} images but {len(cameras)} cameras")
    pyramids = []
    for img, cam in zip(images, cameras):
        if max(img.width, img.height) > MAX_SIDE:
            raise ValueError(f"image longest side exceeds {MAX_SIDE}px; downscale first")
        if (img.width, img.height) != (cam.width, cam.height):
            raise ValueError("image size does not match camera")
        pyramids.append(build_pyramid(img, cam, kernel_sizes))
    return RayDataset(pyramids, cameras)
