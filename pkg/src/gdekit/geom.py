"""Vectors, quaternions, cameras and rays.

Vectors are plain float64 numpy arrays with a trailing axis of 3; every
function broadcasts over leading batch axes. Quaternions are stored
``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_DRIFT_TOL = 1e-6


def normalize(v: np.ndarray, eps: float = 0.0) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps) if eps > 0 else v / n


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = normalize(axis)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` by the unit quaternion ``q``.

    ``q`` is renormalized if its norm drifted by more than 1e-6.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(np.abs(norm - 1.0) > QUAT_DRIFT_TOL):
        q = q / norm
    w = q[..., :1]
    u = q[..., 1:]
    # v' = v + 2w (u x v) + 2 u x (u x v)
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (normalized) quaternion, shape ``(..., 3, 3)``."""
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def quat_matrix_jacobian(q: np.ndarray) -> np.ndarray:
    """Partial derivatives of :func:`quat_to_matrix` (unnormalized formula).

    Returns shape ``(..., 4, 3, 3)`` where entry ``k`` is dR/dq_k evaluated
    at ``q`` (taken as already unit length).
    """
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    o = np.zeros_like(w)

    def mat(rows):
        return np.stack([np.stack(r, -1) for r in rows], -2)

    d_w = mat([[o, -z, y], [z, o, -x], [-y, x, o]])
    d_x = mat([[o, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    d_y = mat([[-2 * y, x, w], [x, o, z], [-w, z, -2 * y]])
    d_z = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, o]])
    return 2.0 * np.stack([d_w, d_x, d_y, d_z], -3)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Quaternion ``(w, x, y, z)`` of a single 3x3 rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    return quat_normalize(rng.normal(size=(n, 4)))


def tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangents ``(t, b)`` with ``t x b = n`` (branchless ONB)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], -1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], -1)
    return t, bt


@dataclass(frozen=True)
class Ray:
    """Ray bundle; ``origin``/``direction`` are ``(..., 3)``, ``base_radius`` ``(...)``."""

    origin: np.ndarray
    direction: np.ndarray
    base_radius: np.ndarray = field(default_factory=lambda: np.zeros(()))

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        r = np.broadcast_to(np.asarray(self.base_radius, dtype=np.float64), self.origin.shape[:-1])
        if np.any(r < 0):
            raise ValueError("base_radius must be non-negative")
        object.__setattr__(self, "base_radius", r)

    def __len__(self) -> int:
        return self.origin.shape[0]

    def __getitem__(self, idx) -> "Ray":
        return Ray(self.origin[idx], self.direction[idx], self.base_radius[idx])

    def at(self, t) -> np.ndarray:
        return self.origin + np.asarray(t)[..., None] * self.direction


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: view space +z forward, +y down; stores world-from-view."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def look_at(cls, eye, target, width, height, fov_deg=60.0, up=(0.0, 1.0, 0.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = normalize(np.asarray(target, dtype=np.float64) - eye)
        right = normalize(np.cross(fwd, up))
        down = np.cross(fwd, right)
        f = 0.5 * max(width, height) / np.tan(0.5 * np.radians(fov_deg))
        rot = np.stack([right, down, fwd], axis=1)
        return cls(f, f, width / 2.0, height / 2.0, rot, eye, int(width), int(height))

    @property
    def base_radius(self) -> float:
        return 1.0 / max(self.fx, self.fy)

    def pixel_centers(self) -> np.ndarray:
        """``(H*W, 2)`` array of ``(u, v)`` pixel-center coordinates, row-major."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([u.ravel() + 0.5, v.ravel() + 0.5], -1).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], np.array(d["rotation"]),
                   np.array(d["translation"]), int(d["width"]), int(d["height"]))


def generate_rays(camera: Camera, pixels) -> Ray:
    """Rays through continuous pixel coordinates ``(u, v)`` (pixel centers at +0.5)."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any((u < 0) | (u > camera.width) | (v < 0) | (v > camera.height)):
        raise ValueError("pixel outside image bounds")
    view = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], -1)
    dirs = normalize(view @ camera.rotation.T)
    origins = np.broadcast_to(camera.translation, dirs.shape).copy()
    return Ray(origins, dirs, np.full(len(dirs), camera.base_radius))


def stereographic_project(d: np.ndarray) -> np.ndarray:
    """Project unit directions from the pole (0, 0, -1) onto the z=0 plane."""
    d = np.asarray(d, dtype=np.float64)
    denom = 1.0 + d[..., 2]
    if np.any(denom <= 1e-12):
        raise ValueError("projection undefined at pole")
    return d[..., :2] / denom[..., None]


def stereographic_unproject(st: np.ndarray) -> np.ndarray:
    st = np.asarray(st, dtype=np.float64)
    s, t = st[..., 0], st[..., 1]
    r2 = s * s + t * t
    return np.stack([2 * s, 2 * t, 1.0 - r2], -1) / (1.0 + r2)[..., None]


def fibonacci_hemisphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit directions on the z >= 0 hemisphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], -1)
