"""Joint training of the scene field, the Gaussians and the specular decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..geom import Camera, Ray, generate_rays
from ..image import ImageBuffer, mae_degrees, psnr
from ..optim.adam import AdamState, adam_step
from ..optim.losses import (
    LossWeights,
    combined_loss,
    loss_distortion,
    loss_l1_color,
    loss_mono_normal,
    loss_normal_pred,
)
from .model import FieldConfig, SceneField, density_gradient_numeric
from .render import RayBatch, shade_pixel

NORM_SAMPLES = 8


@dataclass
class TrainConfig:
    iterations: int = 10_000
    batch: int = 1024
    lr: float = 5e-3
    lr_gauss: float = 1e-3
    lr_decoder: float = 1e-3
    n_samples: int = 32
    n_importance: int = 16
    lambda_dist: float = 0.002
    lambda_mono: float = 1.0
    lambda_norm: float = 1e-3
    mono_stop_iter: int = 400
    early_stop: bool = True
    optimize_gaussians: bool = True
    diffuse_only: bool = False
    val_every: int = 0
    seed: int = 0
    field: dict = field(default_factory=dict)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_dist, self.lambda_mono, self.lambda_norm,
                           self.mono_stop_iter, self.early_stop)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class View:
    image: ImageBuffer
    camera: Camera
    normal: np.ndarray | None = None  # view-space normal map (H, W, 3)


class PixelTable:
    """All pixels of a set of views as flat arrays, valid pixels indexable."""

    def __init__(self, views: list[View], bbox, dtype=torch.float32):
        rows = {k: [] for k in ("o", "d", "r", "target", "normal", "rot")}
        valid = []
        for v in views:
            cam = v.camera
            ray = generate_rays(cam, cam.pixel_centers())
            n = len(ray)
            rows["o"].append(ray.origin)
            rows["d"].append(ray.direction)
            rows["r"].append(ray.base_radius)
            rows["target"].append(v.image.data.reshape(n, -1)[:, :3])
            rows["normal"].append(np.zeros((n, 3)) if v.normal is None else v.normal.reshape(n, 3))
            rows["rot"].append(np.broadcast_to(cam.rotation, (n, 3, 3)))
            valid.append(v.image.valid.ravel())
        cat = {k: np.concatenate(a) for k, a in rows.items()}
        self.rays = RayBatch.from_rays(Ray(cat["o"], cat["d"], cat["r"]), *bbox, dtype=dtype)
        self.target = torch.tensor(cat["target"], dtype=dtype)
        self.normal = torch.tensor(cat["normal"], dtype=dtype)
        self.rot = torch.tensor(cat["rot"], dtype=dtype)
        self.valid_rows = np.flatnonzero(np.concatenate(valid))


@dataclass
class TrainResult:
    field: SceneField
    encoding: object
    decoder: object
    losses: list
    val_psnr: list
    config: TrainConfig


def loss_parts(f, enc, dec, table: PixelTable, rows, it: int, cfg: TrainConfig, weights: LossWeights):
    rays = table.rays.subset(rows)
    gen = torch.Generator().manual_seed(int(np.random.default_rng([cfg.seed, it, 1]).integers(2**62)))
    out = shade_pixel(f, enc, dec, rays, 0.0, cfg.n_samples, cfg.n_importance, gen,
                      diffuse_only=cfg.diffuse_only)
    parts = {"color": loss_l1_color(out.color, table.target[rows])}
    span = (rays.far - rays.near)[:, None]
    if weights.dist > 0:
        s_mid = ((out.t - rays.near[:, None]) / span).double()
        parts["dist"] = loss_distortion(out.weights.double(), s_mid, (out.dt / span).double()).to(span.dtype)
    if weights.mono_weight(it) > 0:
        parts["mono"] = loss_mono_normal(out.normal, table.normal[rows], table.rot[rows])
    if weights.norm > 0:
        k = min(NORM_SAMPLES, out.t.shape[1])
        idx = torch.topk(out.weights.detach(), k, dim=-1).indices
        pts = out.points.gather(1, idx[..., None].expand(-1, -1, 3))
        ts = out.t.gather(1, idx)
        grad = density_gradient_numeric(f, pts, ts, rays.base_radius[:, None])
        n_sel = out.sample_normals.gather(1, idx[..., None].expand(-1, -1, 3))
        parts["norm"] = loss_normal_pred(n_sel.reshape(-1, 3), grad.reshape(-1, 3))
    return parts


def render_views(f, enc, dec, views: list[View], bbox, cfg: TrainConfig, chunk: int = 4096,
                 roughness_offset: float = 0.0) -> list[dict]:
    """Deterministic full-image renders of every buffer."""
    outs = []
    for v in views:
        table = PixelTable([View(v.image, v.camera)], bbox)
        parts = []
        with torch.no_grad():
            for s in range(0, len(table.rays), chunk):
                rows = np.arange(s, min(s + chunk, len(table.rays)))
                o = shade_pixel(f, enc, dec, table.rays.subset(rows), roughness_offset,
                                cfg.n_samples, cfg.n_importance, None, diffuse_only=cfg.diffuse_only)
                parts.append(o)
        h, w = v.camera.height, v.camera.width
        buf = {}
        for key in ("color", "diffuse", "specular", "tint", "normal"):
            buf[key] = torch.cat([getattr(p, key) for p in parts]).double().numpy().reshape(h, w, 3)
        for key in ("roughness", "depth", "opacity"):
            buf[key] = torch.cat([getattr(p, key) for p in parts]).double().numpy().reshape(h, w)
        outs.append(buf)
    return outs


def evaluate(f, enc, dec, views: list[View], bbox, cfg: TrainConfig) -> dict:
    """Mean PSNR over views and mean floor-normal angular error (where GT normals are given)."""
    renders = render_views(f, enc, dec, views, bbox, cfg)
    ps, maes = [], []
    for v, r in zip(views, renders):
        ps.append(psnr(ImageBuffer(r["color"], v.image.valid), v.image))
        if v.normal is not None:
            up_view = v.camera.rotation.T @ np.array([0.0, 1.0, 0.0])
            floor = (v.normal.reshape(-1, 3) @ up_view > 0.99).reshape(v.normal.shape[:2])
            if floor.any():
                pred_view = r["normal"] @ v.camera.rotation
                maes.append(mae_degrees(ImageBuffer(pred_view, floor), ImageBuffer(v.normal, floor)))
    return {"psnr": float(np.mean(ps)), "floor_mae": float(np.mean(maes)) if maes else None,
            "renders": renders}


def train_field(train: list[View], bbox, encoding, decoder, cfg: TrainConfig, val: list[View] | None = None,
                callback=None) -> TrainResult:
    """Minibatch training with the combined loss.

    ``encoding`` is a :class:`GaussianEncoding` (initialized or not); ``decoder``
    a :class:`SpecularDecoder`. Both are updated in place unless frozen.
    """
    weights = cfg.loss_weights()
    if weights.mono > 0 and any(v.normal is None for v in train):
        raise ValueError("normal maps required when lambda_mono > 0")
    f = SceneField(*bbox, FieldConfig.from_dict(cfg.field), seed=cfg.seed)
    table = PixelTable(train, bbox)
    opt_field, opt_dec, opt_gauss = AdamState(lr=cfg.lr), AdamState(lr=cfg.lr_decoder), AdamState(lr=cfg.lr_gauss)
    losses, val_psnr = [], []
    train_gauss = cfg.optimize_gaussians and not cfg.diffuse_only
    encoding.requires_grad_(train_gauss)
    for it in range(cfg.iterations):
        rows = table.valid_rows[np.random.default_rng([cfg.seed, it]).integers(0, len(table.valid_rows), cfg.batch)]
        groups = [(opt_field, dict(f.named_parameters()))]
        if not cfg.diffuse_only:
            groups.append((opt_dec, dict(decoder.named_parameters())))
            if train_gauss:
                groups.append((opt_gauss, dict(encoding.named_parameters())))
        for _, params in groups:
            for p in params.values():
                p.grad = None
        parts = loss_parts(f, encoding, decoder, table, rows, it, cfg, weights)
        loss = combined_loss(parts, it, weights)
        loss.backward()
        with torch.no_grad():
            for state, params in groups:
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                adam_step(state, params, grads)
            if train_gauss:
                encoding.renormalize()
        losses.append({k: float(v.detach()) for k, v in parts.items()} | {"total": float(loss.detach())})
        if val and cfg.val_every and ((it + 1) % cfg.val_every == 0 or it + 1 == cfg.iterations):
            val_psnr.append((it + 1, evaluate(f, encoding, decoder, val, bbox, cfg)["psnr"]))
        if callback is not None:
            callback(it, losses[-1])
    return TrainResult(f, encoding, decoder, losses, val_psnr, cfg)
