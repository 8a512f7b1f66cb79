"""Gaussian pyramids with border-validity tracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..gde import RHO_MIN
from ..geom import Camera
from ..image import ImageBuffer

KERNEL_SIZES = (1, 3, 5, 9, 17, 33, 65, 129)


def kernel_sigma(kernel_size: int) -> float:
    """Pixel sigma for a kernel size, OpenCV's default rule; 0 for the identity kernel."""
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    if kernel_size == 1:
        return 0.0
    return 0.3 * ((kernel_size - 1) / 2 - 1) + 0.8


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    sigma = kernel_sigma(kernel_size)
    if sigma == 0.0:
        return np.ones(1)
    x = np.arange(kernel_size) - (kernel_size - 1) / 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


@dataclass
class PyramidLevel:
    image: ImageBuffer
    kernel_size: int
    sigma_px: float
    roughness: float = RHO_MIN


def gaussian_blur(img: ImageBuffer, kernel_size: int) -> PyramidLevel:
    """Separable blur; pixels whose support leaves the image or hits an invalid pixel become invalid."""
    k = gaussian_kernel(kernel_size)
    data = img.data
    for axis in (0, 1):
        data = ndimage.correlate1d(data, k, axis=axis, mode="nearest")
    radius = kernel_size // 2
    if radius:
        valid = ndimage.binary_erosion(img.valid, structure=np.ones((kernel_size, kernel_size), bool),
                                       border_value=0)
    else:
        valid = img.valid.copy()
    return PyramidLevel(ImageBuffer(data, valid), kernel_size, kernel_sigma(kernel_size))


def sigma_to_roughness(sigma_px: float, camera: Camera) -> float:
    """Pixel sigma as an angle in radians, floored at RHO_MIN."""
    return max(sigma_px / max(camera.fx, camera.fy), RHO_MIN)


def kernel_to_roughness(kernel_size: int, camera: Camera) -> float:
    return sigma_to_roughness(kernel_sigma(kernel_size), camera)


def build_pyramid(img: ImageBuffer, camera: Camera, kernel_sizes=KERNEL_SIZES) -> list[PyramidLevel]:
    levels = []
    for ks in kernel_sizes:
        level = gaussian_blur(img, ks)
        level.roughness = kernel_to_roughness(ks, camera)
        levels.append(level)
    return levels
