"""Finite-difference verification of the encoding gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gde import GaussianSet, encode, encode_grad
from .geom import Ray, random_quaternions

GRAD_FLOOR = 1e-6
GROUPS = ("mu", "log_inv_scale", "rot", "origin", "direction", "rho")


@dataclass
class GradReport:
    max_rel_err: dict[str, float] = field(default_factory=dict)
    n_configs: int = 0
    tol: float = 1e-4
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_rel_err.values())

    def lines(self) -> list[str]:
        out = [f"{k:>14s}  max rel err {v:.3e}" for k, v in self.max_rel_err.items()]
        extra = f", {self.skipped} skipped" if self.skipped else ""
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{'result':>14s}  {verdict} ({self.n_configs} configs{extra}, tol {self.tol:g})")
        return out


def rel_err(a, b, floor=1e-12) -> float:
    """Max abs difference over the group, relative to the group's largest magnitude."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), floor)
    return float(np.abs(a - b).max() / scale)


def random_config(rng: np.random.Generator):
    """One Gaussian, one ray and a roughness with a non-negligible encoding value."""
    while True:
        gs = GaussianSet(rng.normal(size=(1, 3)), rng.uniform(-1.0, 0.7, size=(1, 3)),
                         random_quaternions(rng, 1))
        d = rng.normal(size=(1, 3))
        ray = Ray(gs.mu + rng.normal(scale=1.5, size=(1, 3)), d / np.linalg.norm(d))
        rho = rng.uniform(0.3, 2.0, size=1)
        val = encode(gs, ray, rho)[0, 0]
        if 1e-4 < val:
            return gs, ray, rho


def local_dot(gs: GaussianSet, ray: Ray, rho) -> float:
    from .gde import to_local

    a, b = to_local(gs[0], ray, rho)
    return float(np.sum(a * b))


def check_encoding_gradients(n_configs: int = 500, seed: int = 0, step: float = 1e-4,
                             tol: float = 1e-4, grad_fn=encode_grad) -> GradReport:
    """Central differences vs ``grad_fn`` on random single-Gaussian configs.

    Configurations within 1e-6 of the branch boundary are skipped.
    """
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in GROUPS}
    done = 0
    while done < n_configs:
        gs, ray, rho = random_config(rng)
        if abs(local_dot(gs, ray, rho)) < 1e-6:
            continue
        up = rng.uniform(0.5, 2.0, size=(1, 1))
        _, grad = grad_fn(gs, ray, rho, up)

        def loss(gs_, ray_, rho_):
            return float(np.sum(up * encode(gs_, ray_, rho_)))

        fields = {
            "mu": (gs.mu, grad.mu),
            "log_inv_scale": (gs.log_inv_scale, grad.log_inv_scale),
            "rot": (gs.rot, grad.rot),
            "origin": (ray.origin, grad.origin),
            "direction": (ray.direction, grad.direction),
            "rho": (rho, grad.rho),
        }
        for name, (arr, g) in fields.items():
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + step
                fp = loss(gs, ray, rho)
                arr[idx] = old - step
                fm = loss(gs, ray, rho)
                arr[idx] = old
                fd[idx] = (fp - fm) / (2 * step)
            worst[name] = max(worst[name], rel_err(fd, g))
        done += 1
    return GradReport(worst, done, tol)


def check_end_to_end(n_params: int = 20, seed: int = 0, step: float = 1e-5, tol: float = 1e-3) -> GradReport:
    """Backprop vs central differences of the full training loss on a tiny float64 model.

    8^3 grids, 4 Gaussians, one 2x2 view. Parameters are drawn among entries
    with gradient magnitude above GRAD_FLOOR: zero-gradient entries would pass
    trivially, and below ~1e-6 the difference quotient is dominated by roundoff.
    Entries whose difference quotient changes by >10% when the step halves sit
    on a discontinuity (normal sign flip) and are replaced by another draw.
    """
    import torch

    from .field.model import FieldConfig
    from .field.train import PixelTable, TrainConfig, View, loss_parts
    from .field.model import SceneField
    from .gde_torch import GaussianEncoding
    from .geom import Camera
    from .image import ImageBuffer
    from .optim.lightfield import SpecularDecoder
    from .optim.losses import combined_loss

    rng = np.random.default_rng(seed)
    bbox = ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    cam = Camera.look_at([0.5, 0.6, 0.1], [0.5, 0.4, 0.9], 2, 2, fov_deg=50)
    normals = rng.normal(size=(2, 2, 3))
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    view = View(ImageBuffer(rng.uniform(0.1, 0.9, size=(2, 2, 3))), cam, normals)
    cfg = TrainConfig(n_samples=8, n_importance=0, seed=seed,
                      field={"resolutions": (8,), "features": 4, "normal_resolutions": (8,),
                             "hidden": 16, "density_bias": 0.5, "grid_init": 0.5, "bbox_margin": 0.0})
    f = SceneField(*bbox, FieldConfig.from_dict(cfg.field), seed=seed).double()
    gs = GaussianSet(rng.uniform(0.0, 1.0, (4, 3)), np.full((4, 3), 0.5), random_quaternions(rng, 4))
    enc = GaussianEncoding(gs)
    dec = SpecularDecoder(4, hidden=16, seed=seed).double()
    table = PixelTable([view], bbox, dtype=torch.float64)
    rows = np.arange(4)
    weights = cfg.loss_weights()

    def loss():
        return combined_loss(loss_parts(f, enc, dec, table, rows, 0, cfg, weights), 0, weights)

    params = [p for m in (f, dec, enc) for p in m.parameters()]
    for p in params:
        p.grad = None
    loss().backward()
    candidates = [(i, j) for i, p in enumerate(params) for j in np.flatnonzero(p.grad.reshape(-1).abs() > GRAD_FLOOR)]
    order = rng.permutation(len(candidates))

    def central(flat, j, h):
        old = flat[j].item()
        flat[j] = old + h
        lp = loss().item()
        flat[j] = old - h
        lm = loss().item()
        flat[j] = old
        return (lp - lm) / (2 * h)

    worst, done, skipped = 0.0, 0, 0
    with torch.no_grad():
        for k in order:
            if done == n_params:
                break
            i, j = candidates[k]
            flat = params[i].data.view(-1)
            fd, fd_half = central(flat, j, step), central(flat, j, step / 2)
            if abs(fd - fd_half) > 0.1 * max(abs(fd), abs(fd_half)):
                skipped += 1  # stencil straddles a jump (normal flip, clamp edge)
                continue
            bp = params[i].grad.reshape(-1)[j].item()
            worst = max(worst, abs(fd - bp) / max(abs(fd), abs(bp)))
            done += 1
    return GradReport({"end_to_end": worst}, done, tol, skipped)
