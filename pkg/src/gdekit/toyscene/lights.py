"""Planar area lights with analytic ray intersection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import normalize

SHAPES = ("disc", "rectangle", "ring", "triangle")
RING_INNER = 0.6
RECT_ASPECT = 0.5


@dataclass
class ToyLight:
    """Two-sided emitter spanned by orthonormal in-plane axes ``u_axis``/``v_axis``.

    ``extent`` is the disc/ring radius, the rectangle half-width (half-height
    is ``RECT_ASPECT * extent``) or the triangle circumradius, in meters.
    """

    shape: str
    center: np.ndarray
    extent: float
    radiance: np.ndarray
    u_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    v_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown light shape {self.shape!r}")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if np.any(self.radiance < 0):
            raise ValueError("radiance must be non-negative")
        self.u_axis = normalize(self.u_axis)
        self.v_axis = normalize(self.v_axis)

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)

    def scaled(self, factor: float) -> "ToyLight":
        return ToyLight(self.shape, self.center, self.extent, self.radiance * factor, self.u_axis, self.v_axis)

    def mirrored_x(self) -> "ToyLight":
        m = np.array([-1.0, 1.0, 1.0])
        return ToyLight(self.shape, self.center * m, self.extent, self.radiance, self.u_axis * m, self.v_axis * m)

    def contains(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Membership of in-plane coordinates ``(s, t)``."""
        e = self.extent
        if self.shape == "disc":
            return s * s + t * t <= e * e
        if self.shape == "ring":
            r2 = s * s + t * t
            return (r2 <= e * e) & (r2 >= (RING_INNER * e) ** 2)
        if self.shape == "rectangle":
            return (np.abs(s) <= e) & (np.abs(t) <= RECT_ASPECT * e)
        # equilateral triangle, circumradius e, apex along +t
        inside = t >= -0.5 * e
        for ang in (np.pi / 6, 5 * np.pi / 6):
            nx, ny = np.cos(ang), np.sin(ang)
            inside &= s * nx + t * ny <= 0.5 * e
        return inside

    def intersect(self, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Hit distance per ray, ``inf`` on miss."""
        n = self.normal
        denom = direction @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - origin) @ n) / denom
        ok = np.isfinite(t) & (t > 1e-9)
        p = origin + np.where(ok, t, 0.0)[..., None] * direction - self.center
        ok &= self.contains(p @ self.u_axis, p @ self.v_axis)
        return np.where(ok, t, np.inf)


def first_light_hit(lights: list[ToyLight], origin, direction):
    """``(t, index)`` of the nearest light per ray; index -1 on miss."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    shape = np.broadcast_shapes(origin.shape, direction.shape)[:-1]
    best_t = np.full(shape, np.inf)
    best_i = np.full(shape, -1)
    for i, light in enumerate(lights):
        t = light.intersect(origin, direction)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
    return best_t, best_i


def toy_env_radiance(lights: list[ToyLight], x, direction) -> np.ndarray:
    """Radiance of the first light hit along each ray, zero on miss."""
    _, idx = first_light_hit(lights, x, direction)
    table = np.vstack([np.stack([lt.radiance for lt in lights]), np.zeros(3)])
    return table[idx]


def default_probe_lights(rng=None, height: float = 1.0, spread: float = 1.5) -> list[ToyLight]:
    """Four downward-facing lights of distinct shape and color above the probe track.

    With ``rng`` given, positions, sizes and in-plane rotations are jittered.
    """
    colors = [(1.0, 0.15, 0.1), (0.1, 1.0, 0.2), (0.15, 0.3, 1.0), (1.0, 0.9, 0.2)]
    xs = np.linspace(-spread, spread, 4)
    lights = []
    for i, (shape, color) in enumerate(zip(SHAPES, colors)):
        cx, cz, h, ext, rot = xs[i], 0.35 * (-1) ** i, height, 0.3, 0.0
        if rng is not None:
            cx += rng.uniform(-0.2, 0.2)
            cz = rng.uniform(-0.5, 0.5)
            h = height * rng.uniform(0.8, 1.3)
            ext = rng.uniform(0.2, 0.4)
            rot = rng.uniform(0, np.pi)
        u = np.array([np.cos(rot), 0.0, np.sin(rot)])
        v = np.array([-np.sin(rot), 0.0, np.cos(rot)])
        lights.append(ToyLight(shape, [cx, h, cz], ext, color, u, v))
    return lights
