"""Ray marching, compositing and once-per-ray specular shading."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..gde import RHO_MIN
from ..geom import Ray
from .model import SceneField, correct_normal, floor_roughness, reflect

OPACITY_MIN = 0.01
T_NEAR = 0.05


@dataclass
class RayBatch:
    origin: torch.Tensor  # (B, 3)
    direction: torch.Tensor  # (B, 3) unit
    base_radius: torch.Tensor  # (B,)
    near: torch.Tensor  # (B,)
    far: torch.Tensor  # (B,)

    def __len__(self) -> int:
        return self.origin.shape[0]

    def subset(self, idx) -> "RayBatch":
        return RayBatch(self.origin[idx], self.direction[idx], self.base_radius[idx],
                        self.near[idx], self.far[idx])

    @classmethod
    def from_rays(cls, ray: Ray, bbox_min, bbox_max, t_near: float = T_NEAR,
                  dtype=torch.float32) -> "RayBatch":
        """Clip rays to the far side of the box; origins are assumed inside."""
        o, d = np.atleast_2d(ray.origin), np.atleast_2d(ray.direction)
        lo, hi = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_exit = np.where(d > 0, (hi - o) / d, np.where(d < 0, (lo - o) / d, np.inf)).min(-1)
        far = np.maximum(t_exit, t_near + 1e-3)
        def as_t(a):
            return torch.tensor(np.asarray(a), dtype=dtype)

        return cls(as_t(o), as_t(d), as_t(np.broadcast_to(ray.base_radius, len(o))),
                   as_t(np.full(len(o), t_near)), as_t(far))


@dataclass
class RenderOutput:
    color: torch.Tensor
    diffuse: torch.Tensor
    specular: torch.Tensor
    tint: torch.Tensor
    roughness: torch.Tensor
    normal: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    weights: torch.Tensor
    t: torch.Tensor
    dt: torch.Tensor
    residual: torch.Tensor
    sample_normals: torch.Tensor
    points: torch.Tensor


def stratified(rays: RayBatch, n: int, gen: torch.Generator | None):
    """One sample per equal bin; bin centers when ``gen`` is None."""
    b = len(rays)
    dt = rays.origin.dtype
    u = torch.full((b, n), 0.5, dtype=dt) if gen is None else torch.rand(b, n, generator=gen, dtype=dt)
    frac = (torch.arange(n, dtype=dt) + u) / n
    return rays.near[:, None] + (rays.far - rays.near)[:, None] * frac


def sample_pdf(edges: torch.Tensor, weights: torch.Tensor, n: int, gen: torch.Generator | None):
    """Inverse-CDF samples from piecewise-constant weights over ``edges`` ``(B, K+1)``."""
    w = weights + 1e-5
    cdf = torch.cumsum(w / w.sum(-1, keepdim=True), -1)
    cdf = torch.cat([torch.zeros_like(cdf[:, :1]), cdf], -1)
    b = weights.shape[0]
    dt = edges.dtype
    if gen is None:
        u = ((torch.arange(n, dtype=dt) + 0.5) / n).expand(b, n).contiguous()
    else:
        u = torch.rand(b, n, generator=gen, dtype=dt)
    idx = torch.searchsorted(cdf, u, right=True).clamp(1, cdf.shape[-1] - 1)
    c0, c1 = cdf.gather(-1, idx - 1), cdf.gather(-1, idx)
    e0, e1 = edges.gather(-1, idx - 1), edges.gather(-1, idx)
    frac = (u - c0) / torch.clamp(c1 - c0, min=1e-12)
    return e0 + frac * (e1 - e0)


def intervals(t: torch.Tensor, near: torch.Tensor, far: torch.Tensor) -> torch.Tensor:
    """Interval lengths of a partition of ``[near, far]`` around sorted samples."""
    mid = 0.5 * (t[:, 1:] + t[:, :-1])
    lower = torch.cat([near[:, None], mid], -1)
    upper = torch.cat([mid, far[:, None]], -1)
    return upper - lower


def composite_weights(density: torch.Tensor, dt: torch.Tensor):
    """Emission-absorption weights ``T_i (1 - exp(-tau_i dt_i))`` in float64, plus residual ``T``."""
    x = density.double() * dt.double()
    trans = torch.exp(-torch.cat([torch.zeros_like(x[:, :1]), torch.cumsum(x, -1)], -1))
    w = trans[:, :-1] - trans[:, 1:]
    return w, trans[:, -1]


def volume_render(f: SceneField, rays: RayBatch, n_samples: int = 32, n_importance: int = 0,
                  gen: torch.Generator | None = None, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render every attribute except specular (see :func:`shade_pixel`)."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if bool((rays.near >= rays.far).any()):
        raise ValueError("t_near must be below t_far")
    o, d = rays.origin, rays.direction
    t = stratified(rays, n_samples, gen)
    if n_importance > 0:
        with torch.no_grad():
            dens = f.density(o[:, None] + t[..., None] * d[:, None])[..., 0]
            w, _ = composite_weights(dens, intervals(t, rays.near, rays.far))
            frac = torch.linspace(0, 1, n_samples + 1, dtype=t.dtype)
            edges = rays.near[:, None] + (rays.far - rays.near)[:, None] * frac
            extra = sample_pdf(edges, w.to(t.dtype), n_importance, gen)
        t = torch.sort(torch.cat([t, extra], -1), -1).values
    dt = intervals(t, rays.near, rays.far)
    pts = o[:, None] + t[..., None] * d[:, None]
    dirs = d[:, None].expand_as(pts)
    s = f(pts, dirs)
    w64, resid64 = composite_weights(s.density[..., 0], dt)
    w, resid = w64.to(t.dtype), resid64.to(t.dtype)
    acc = w.sum(-1, keepdim=True)
    n_samp, _ = correct_normal(dirs, s.normal_raw)
    blended = (w[..., None] * n_samp).sum(1)
    bn2 = (blended * blended).sum(-1, keepdim=True)
    ok = bn2 > 1e-16
    normal = torch.where(ok, blended / torch.sqrt(torch.where(ok, bn2, torch.ones_like(bn2))),
                         torch.zeros_like(blended))
    bg = torch.as_tensor(background, dtype=t.dtype)
    return RenderOutput(
        color=(w[..., None] * s.diffuse).sum(1) + resid[:, None] * bg,
        diffuse=(w[..., None] * s.diffuse).sum(1) + resid[:, None] * bg,
        specular=torch.zeros_like(o),
        tint=(w[..., None] * s.tint).sum(1),
        roughness=floor_roughness((w[..., None] * s.roughness).sum(1))[:, 0],
        normal=normal,
        depth=(w * t).sum(-1) / torch.clamp(acc[:, 0], min=1e-10),
        opacity=acc[:, 0],
        weights=w,
        t=t,
        dt=dt,
        residual=resid,
        sample_normals=n_samp,
        points=pts,
    )


def shade_pixel(f: SceneField, encoding, decoder, rays: RayBatch, roughness_offset: float = 0.0,
                n_samples: int = 32, n_importance: int = 0, gen=None, background=(0.0, 0.0, 0.0),
                diffuse_only: bool = False) -> RenderOutput:
    """Volume render, then one specular evaluation per ray at the volumetric depth.

    ``c = clamp(c_d + c_s * s, 0, 1)``; the specular buffer holds ``c_s * s``.
    Rays with opacity below 1% get no specular.
    ``diffuse_only`` forces the tint to zero and skips the encoding.
    """
    out = volume_render(f, rays, n_samples, n_importance, gen, background)
    if diffuse_only:
        out.tint = torch.zeros_like(out.tint)
        out.color = torch.clamp(out.diffuse, 0.0, 1.0)
        return out
    hit = (out.opacity >= OPACITY_MIN)[:, None]
    o_r = rays.origin + out.depth[:, None] * rays.direction
    d_r = reflect(rays.direction, out.normal)
    d_r = d_r / torch.sqrt(torch.clamp((d_r * d_r).sum(-1, keepdim=True), min=1e-24))
    rho = torch.clamp(out.roughness + roughness_offset, min=RHO_MIN)
    c_s = decoder(encoding(o_r, d_r, rho)).to(out.diffuse.dtype)
    out.specular = torch.where(hit, c_s * out.tint, torch.zeros_like(c_s))
    out.color = torch.clamp(out.diffuse + out.specular, 0.0, 1.0)
    return out
