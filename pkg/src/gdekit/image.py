"""Image buffers with validity masks, PFM/PNG I/O and image metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0


@dataclass
class ImageBuffer:
    """``data`` is ``(H, W, C)`` float64; ``valid`` is an ``(H, W)`` bool mask."""

    data: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise ValueError("image data must be (H, W) or (H, W, C)")
        self.data = data
        if self.valid is None:
            self.valid = np.ones(data.shape[:2], dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != data.shape[:2]:
                raise ValueError("validity mask shape does not match image")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def _joint(a: ImageBuffer, b: ImageBuffer):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.valid & b.valid


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    mask = _joint(a, b)
    if not mask.any():
        raise ValueError("no jointly valid pixels")
    mse = float(np.mean((a.data[mask] - b.data[mask]) ** 2))
    if np.isnan(mse):
        return float("nan")
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) over jointly valid pixels."""
    mask = _joint(a, b)
    c1, c2 = 0.01**2, 0.03**2

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=(1.5, 1.5, 0), truncate=5 / 1.5, mode="reflect")

    x, y = a.data, b.data
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap[mask].mean())


def mae_degrees(pred: ImageBuffer, gt: ImageBuffer) -> float:
    """Mean angular error in degrees between normal maps (atan2 form, exact 0 for equal inputs)."""
    mask = _joint(pred, gt)
    a, b = pred.data[mask][:, :3], gt.data[mask][:, :3]
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return float(np.degrees(np.arctan2(cross, np.sum(a * b, axis=-1))).mean())


# --- I/O -------------------------------------------------------------------


def write_pfm(path, data) -> None:
    """Little-endian float32 PFM (scale -1.0); rows stored bottom to top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM supports 1 or 3 channels")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: {path}")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, channels) if channels == 3 else (h, w)
    return np.flipud(raw.reshape(shape)).astype(np.float64)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def write_png(path, data, srgb: bool = True) -> None:
    from PIL import Image

    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    data = linear_to_srgb(data) if srgb else np.clip(data, 0.0, 1.0)
    Image.fromarray(np.round(data * 255).astype(np.uint8)).save(path)


def write_normal_pfm(path, normals) -> None:
    write_pfm(path, (np.asarray(normals) + 1.0) * 0.5)


def read_normal_pfm(path) -> np.ndarray:
    return read_pfm(path) * 2.0 - 1.0


def write_mask_pfm(path, valid) -> None:
    write_pfm(path, np.asarray(valid, dtype=np.float32))


def read_mask_pfm(path) -> np.ndarray:
    return read_pfm(path) > 0.5
