"""Scene field: dense multi-resolution feature grids with small MLP heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..gde import RHO_MIN
from ..sh import sh_basis

TINT_SH_DEGREE = 3
DENSITY_RAW_MAX = 15.0


@dataclass
class FieldConfig:
    resolutions: tuple = (16, 24, 32, 48)
    features: int = 4
    normal_resolutions: tuple = (8, 16)
    hidden: int = 64
    density_bias: float = -1.0
    grid_init: float = 1e-4
    bbox_margin: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        d = dict(d)
        for k in ("resolutions", "normal_resolutions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SampleAttributes:
    density: torch.Tensor  # (..., 1) >= 0
    diffuse: torch.Tensor  # (..., 3) in (0, 1)
    tint: torch.Tensor  # (..., 3) in (0, 1)
    roughness: torch.Tensor  # (..., 1) > 0
    normal_raw: torch.Tensor  # (..., 3)
    t: torch.Tensor | None = None
    dt: torch.Tensor | None = None


def mlp(n_in: int, hidden: int, n_out: int, layers: int) -> torch.nn.Sequential:
    mods, width = [], n_in
    for _ in range(layers):
        mods += [torch.nn.Linear(width, hidden), torch.nn.ReLU()]
        width = hidden
    mods.append(torch.nn.Linear(width, n_out))
    return torch.nn.Sequential(*mods)


class FeatureGrid(torch.nn.Module):
    """Stack of dense grids, trilinear lookup (grid vertices sit on the bbox corners)."""

    def __init__(self, resolutions, features: int, init: float, gen: torch.Generator):
        super().__init__()
        self.grids = torch.nn.ParameterList(
            torch.nn.Parameter((torch.rand(1, features, r, r, r, generator=gen) * 2 - 1) * init)
            for r in resolutions
        )

    @property
    def out_dim(self) -> int:
        return sum(g.shape[1] for g in self.grids)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """``u`` in ``[-1, 1]^3`` with shape ``(P, 3)`` -> ``(P, F_total)``."""
        pts = u.reshape(1, -1, 1, 1, 3)
        outs = [F.grid_sample(g, pts, mode="bilinear", padding_mode="border", align_corners=True)
                .reshape(g.shape[1], -1).T for g in self.grids]
        return torch.cat(outs, -1)


class SceneField(torch.nn.Module):
    def __init__(self, bbox_min, bbox_max, cfg: FieldConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or FieldConfig()
        c = self.cfg
        lo, hi = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
        pad = c.bbox_margin * (hi - lo)
        self.register_buffer("lo", torch.tensor(lo - pad, dtype=torch.float32))
        self.register_buffer("hi", torch.tensor(hi + pad, dtype=torch.float32))
        gen = torch.Generator().manual_seed(seed)
        torch.manual_seed(seed)  # head initialization
        self.grid = FeatureGrid(c.resolutions, c.features, c.grid_init, gen)
        self.normal_grid = FeatureGrid(c.normal_resolutions, c.features, c.grid_init, gen)
        f, h = self.grid.out_dim, c.hidden
        n_sh = (TINT_SH_DEGREE + 1) ** 2
        self.density_head = mlp(f, h, 1, 1)
        self.diffuse_head = mlp(f, h, 3, 2)
        self.tint_head = mlp(f + n_sh, h, 3, 2)
        self.roughness_head = mlp(f, h, 1, 2)
        self.normal_head = mlp(self.normal_grid.out_dim, h, 3, 1)
        with torch.no_grad():
            self.density_head[-1].bias.fill_(c.density_bias)

    def normalized(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        u = 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
        inside = (u.abs() <= 1.0).all(-1, keepdim=True)
        return u.clamp(-1.0, 1.0), inside

    def density(self, x: torch.Tensor) -> torch.Tensor:
        """Density alone (cheap path for numerical gradients)."""
        shape = x.shape[:-1]
        u, inside = self.normalized(x.reshape(-1, 3))
        raw = self.density_head(self.grid(u)).clamp(max=DENSITY_RAW_MAX)
        return (torch.exp(raw) * inside).reshape(shape + (1,))

    def forward(self, x: torch.Tensor, view_dir: torch.Tensor) -> SampleAttributes:
        shape = x.shape[:-1]
        u, inside = self.normalized(x.reshape(-1, 3))
        feat = self.grid(u)
        sh = sh_basis(view_dir.reshape(-1, 3), TINT_SH_DEGREE).to(feat.dtype)
        raw = self.density_head(feat).clamp(max=DENSITY_RAW_MAX)
        out = SampleAttributes(
            density=torch.exp(raw) * inside,
            diffuse=torch.sigmoid(self.diffuse_head(feat)),
            tint=torch.sigmoid(self.tint_head(torch.cat([feat, sh], -1))),
            roughness=F.softplus(self.roughness_head(feat)),
            normal_raw=self.normal_head(self.normal_grid(u)),
        )
        for k in ("density", "diffuse", "tint", "roughness", "normal_raw"):
            v = getattr(out, k)
            setattr(out, k, v.reshape(shape + v.shape[-1:]))
        return out


def sample_field(f: SceneField, x, view_dir=None) -> SampleAttributes:
    dtype = f.lo.dtype
    x = torch.as_tensor(x, dtype=dtype)
    if view_dir is None:
        view_dir = torch.zeros_like(x)
        view_dir[..., 2] = 1.0
    return f(x, torch.as_tensor(view_dir, dtype=dtype))


def _dot(a, b):
    if isinstance(a, np.ndarray):
        return (a * b).sum(-1, keepdims=True)
    return (a * b).sum(-1, keepdim=True)


def reflect(d, n):
    """``d - 2 (d.n) n``; numpy or torch."""
    return d - 2.0 * _dot(d, n) * n


def correct_normal(d, n_raw, eps: float = 1e-12):
    """Flip ``n_raw`` to face against ``d`` and normalize.

    ``sign(0)`` counts as +1, so normals perpendicular to ``d`` are negated.
    Zero normals fall back to ``-d``. Returns ``(normal, zero_flag)``.
    """
    sq = _dot(n_raw, n_raw)
    flip = _dot(d, n_raw) >= 0  # -sign(d.n) with sign(0) = +1
    zero = sq <= eps * eps
    if isinstance(n_raw, np.ndarray):
        n = np.where(flip, -n_raw, n_raw) / np.sqrt(np.where(zero, 1.0, sq))
        return np.where(zero, -d, n), zero[..., 0]
    # keep sqrt away from 0 so masked entries do not leak nan gradients
    n = torch.where(flip, -n_raw, n_raw) / torch.sqrt(torch.where(zero, torch.ones_like(sq), sq))
    return torch.where(zero, -d, n), zero[..., 0]


def density_gradient_numeric(f: SceneField, x: torch.Tensor, t, base_radius, eps_min: float = 1e-3):
    """Central differences of the density with step ``max(t * r, eps_min)`` per sample."""
    t = torch.as_tensor(t, dtype=x.dtype)
    r = torch.as_tensor(base_radius, dtype=x.dtype)
    eps = torch.clamp(t * r, min=eps_min)[..., None]
    offsets = torch.eye(3, dtype=x.dtype)
    xp = x[..., None, :] + eps[..., None] * offsets
    xm = x[..., None, :] - eps[..., None] * offsets
    both = f.density(torch.cat([xp, xm], -2))[..., 0]
    return (both[..., :3] - both[..., 3:]) / (2.0 * eps)


def floor_roughness(rho: torch.Tensor) -> torch.Tensor:
    return torch.clamp(rho, min=RHO_MIN)
