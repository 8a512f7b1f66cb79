"""Desk-scale experiment drivers shared by the acceptance suite and ad-hoc runs."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass

import numpy as np

from .gde import GaussianSet, encode
from .geom import Camera, Ray
from .toyscene import RoomConfig, SyntheticDataset, generate_synthetic_room, room_cameras


def desk_room(views: int = 20, width: int = 64, height: int = 48, val_every: int = 5, seed: int = 0,
              n_mc: int = 512) -> SyntheticDataset:
    cfg = RoomConfig(n_mc=n_mc, seed=seed)
    return generate_synthetic_room(cfg, room_cameras(cfg, views, width, height, seed=seed), val_every)


def moving_average(values, window: int = 10) -> np.ndarray:
    """Sliding mean over ``window`` consecutive entries (only full windows)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        raise ValueError("fewer values than the window")
    return np.convolve(v, np.ones(window) / window, mode="valid")


def non_increasing(values, rtol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=np.float64)
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + rtol)))


# --- initialization stage -----------------------------------------------------


@dataclass
class InitOutcome:
    state: object
    epoch_losses: list
    psnr_per_kernel: dict
    blurred_psnr: float
    seconds: float


def init_stage(ds: SyntheticDataset, iterations: int = 2000, batch: int = 4096, n_gaussians: int = 256,
               seed: int = 0) -> InitOutcome:
    """Fit the light field on the training views, score it on blurred held-out views.

    ``blurred_psnr`` averages the pyramid levels with kernel size > 1. An
    epoch is ``ceil(records / batch)`` iterations.
    """
    from .optim import (LightFieldConfig, SpecularDecoder, blurred_view_psnr, build_ray_dataset, epoch_means,
                        fit_light_field)

    t0 = time.perf_counter()
    data = build_ray_dataset(ds.images(ds.train), [ds.cameras[i] for i in ds.train])
    gs = GaussianSet.default_init(*ds.config.bbox, n=n_gaussians, rng=seed)
    cfg = LightFieldConfig(iterations=iterations, batch=batch, seed=seed)
    state = fit_light_field(data, gs, SpecularDecoder(n_gaussians, seed=seed), cfg)
    per = blurred_view_psnr(state, ds.images(ds.val), [ds.cameras[i] for i in ds.val])
    blurred = float(np.mean([v for k, v in per.items() if k > 1]))
    epochs = epoch_means(state.losses, -(-len(data) // batch))
    return InitOutcome(state, epochs, per, blurred, time.perf_counter() - t0)


# --- ablations ----------------------------------------------------------------

VARIANTS = {
    "full": {},
    "no_gauss_opt": {"optimize_gaussians": False},
    "diffuse_only": {"diffuse_only": True},
    "no_mono": {"lambda_mono": 0.0},
}


def ablation_seed(ds: SyntheticDataset, seed: int, variants=tuple(VARIANTS), init_iterations: int = 300,
                  iterations: int = 800, batch: int = 512, n_gaussians: int = 256) -> dict:
    """Train each variant from one shared initialization; returns per-variant metrics and models."""
    from .field import TrainConfig, View, evaluate, train_field

    init = init_stage(ds, init_iterations, n_gaussians=n_gaussians, seed=seed)
    views = {split: [View(ds.images([i])[0], ds.cameras[i], ds.views[i]["normal"]) for i in idx]
             for split, idx in (("train", ds.train), ("val", ds.val))}
    out = {"init_seconds": init.seconds}
    for name in variants:
        t0 = time.perf_counter()
        cfg = TrainConfig(iterations=iterations, batch=batch, mono_stop_iter=max(1, iterations // 25),
                          seed=seed, **VARIANTS[name])
        enc, dec = copy.deepcopy(init.state.encoding), copy.deepcopy(init.state.decoder)
        res = train_field(views["train"], ds.config.bbox, enc, dec, cfg)
        ev = evaluate(res.field, enc, dec, views["val"], ds.config.bbox, cfg)
        out[name] = {"psnr": ev["psnr"], "floor_mae": ev["floor_mae"], "seconds": time.perf_counter() - t0,
                     "model": (res.field, enc, dec, cfg)}
    return out


# --- roughness controls -------------------------------------------------------


def fan_total_variation(gs: GaussianSet, origin, rho: float, axis_a, axis_b, n: int = 360) -> np.ndarray:
    """Per-channel summed absolute successive differences over a closed great-circle fan."""
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    dirs = np.cos(ang)[:, None] * np.asarray(axis_a) + np.sin(ang)[:, None] * np.asarray(axis_b)
    v = encode(gs, Ray(np.broadcast_to(np.asarray(origin, float), dirs.shape), dirs), rho)
    return np.abs(np.diff(np.vstack([v, v[:1]]), axis=0)).sum(0)


def specular_tv(model, cameras: list[Camera], bbox, offsets) -> list[float]:
    """Image-space total variation of the specular buffer, summed over views, per roughness offset."""
    from .field import View, render_views
    from .image import ImageBuffer

    f, enc, dec, cfg = model
    views = [View(ImageBuffer(np.zeros((c.height, c.width, 3))), c) for c in cameras]
    out = []
    for off in offsets:
        spec = np.stack([r["specular"] for r in render_views(f, enc, dec, views, bbox, cfg, roughness_offset=off)])
        out.append(float(np.abs(np.diff(spec, axis=1)).sum() + np.abs(np.diff(spec, axis=2)).sum()))
    return out
