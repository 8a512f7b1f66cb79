"""Initialization stage: fit Gaussians and the specular decoder to a ray dataset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import blob
from ..gde import GaussianSet
from ..gde_torch import GaussianEncoding
from .adam import AdamState, _to_numpy, adam_step
from ..image import ImageBuffer, psnr
from .dataset import RayDataset, RayRecords
from .pyramid import build_pyramid
from .losses import loss_l1_color


class SpecularDecoder(torch.nn.Module):
    """Encoding -> RGB in (0, 1): two hidden ReLU layers of 64, sigmoid output."""

    def __init__(self, n_in: int, hidden: int = 64, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.net = torch.nn.Sequential(
            torch.nn.Linear(n_in, hidden), torch.nn.ReLU(),
            torch.nn.Linear(hidden, hidden), torch.nn.ReLU(),
            torch.nn.Linear(hidden, 3), torch.nn.Sigmoid(),
        )
        with torch.no_grad():
            for p in self.parameters():
                bound = 1.0 / np.sqrt(p.shape[-1])
                p.copy_(torch.empty(p.shape).uniform_(-bound, bound, generator=gen))

    def forward(self, enc: torch.Tensor) -> torch.Tensor:
        return self.net(enc.to(self.net[0].weight.dtype))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().double().numpy() for k, v in self.state_dict().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.load_state_dict({k: torch.tensor(v, dtype=torch.float32) for k, v in arrays.items()})


@dataclass
class LightFieldConfig:
    iterations: int = 2000
    batch: int = 4096
    lr: float = 1e-3
    optimize_gaussians: bool = True
    seed: int = 0


@dataclass
class LightFieldState:
    """Everything needed to resume: modules, optimizer states, iteration counter."""

    encoding: GaussianEncoding
    decoder: SpecularDecoder
    adam_dec: AdamState
    adam_gauss: AdamState
    iteration: int = 0
    losses: list = field(default_factory=list)

    @classmethod
    def fresh(cls, gs: GaussianSet, decoder: SpecularDecoder, lr: float) -> "LightFieldState":
        return cls(GaussianEncoding(gs), decoder, AdamState(lr=lr), AdamState(lr=lr))


def predict(encoding: GaussianEncoding, decoder: SpecularDecoder, rec: RayRecords) -> torch.Tensor:
    enc = encoding(torch.from_numpy(rec.ray.origin), torch.from_numpy(rec.ray.direction),
                   torch.from_numpy(rec.roughness))
    return decoder(enc)


def batch_rows(seed: int, iteration: int, n: int, batch: int) -> np.ndarray:
    """Minibatch indices; a pure function of (seed, iteration) so runs resume exactly."""
    return np.random.default_rng([seed, iteration]).integers(0, n, size=batch)


def train_step(state: LightFieldState, dataset: RayDataset, cfg: LightFieldConfig) -> float:
    rec = dataset.records(batch_rows(cfg.seed, state.iteration, len(dataset), cfg.batch))
    enc, dec = state.encoding, state.decoder
    for p in list(dec.parameters()) + list(enc.parameters()):
        p.grad = None
    enc.requires_grad_(cfg.optimize_gaussians)
    loss = loss_l1_color(predict(enc, dec, rec), torch.from_numpy(rec.target).float())
    loss.backward()
    with torch.no_grad():
        dparams = dict(dec.named_parameters())
        adam_step(state.adam_dec, dparams, {k: p.grad for k, p in dparams.items()})
        if cfg.optimize_gaussians:
            gparams = dict(enc.named_parameters())
            adam_step(state.adam_gauss, gparams, {k: p.grad for k, p in gparams.items()})
            enc.renormalize()
    state.iteration += 1
    value = float(loss.detach())
    state.losses.append(value)
    return value


def epoch_means(losses, epoch_len: int) -> list[float]:
    """Mean loss over consecutive blocks of ``epoch_len`` iterations (trailing partial block kept)."""
    return [float(np.mean(losses[i : i + epoch_len])) for i in range(0, len(losses), epoch_len)]


def fit_light_field(dataset: RayDataset, gs: GaussianSet, decoder: SpecularDecoder,
                    cfg: LightFieldConfig, state: LightFieldState | None = None,
                    callback=None) -> LightFieldState:
    """Minimize mean L1 between ``decoder(encode(gs, ray, rho))`` and blurred targets.

    Pass ``state`` to resume; ``cfg.iterations`` is the total iteration count.
    """
    if len(dataset) == 0:
        raise ValueError("empty ray dataset")
    state = state or LightFieldState.fresh(gs, decoder, cfg.lr)
    while state.iteration < cfg.iterations:
        loss = train_step(state, dataset, cfg)
        if callback is not None:
            callback(state.iteration, loss)
    return state


def blurred_view_psnr(state: LightFieldState, images: list[ImageBuffer], cameras) -> dict[int, float]:
    """Mean PSNR per pyramid kernel size of the fitted light field against blurred held-out views."""
    data = RayDataset([build_pyramid(img, cam) for img, cam in zip(images, cameras)], list(cameras))
    out = {}
    for lvl, k in enumerate(data.kernel_sizes):
        scores = []
        for v, levels in enumerate(data.pyramids):
            level = levels[lvl]
            rows = np.flatnonzero((data.index[:, 0] == v) & (data.index[:, 1] == lvl))
            if len(rows) == 0:
                continue
            with torch.no_grad():
                pred = predict(state.encoding, state.decoder, data.records(rows)).double().numpy()
            img = np.zeros((level.image.height * level.image.width, 3))
            img[data.index[rows, 2]] = pred
            scores.append(psnr(ImageBuffer(img.reshape(level.image.data.shape[:2] + (3,)), level.image.valid),
                               ImageBuffer(level.image.data[..., :3], level.image.valid)))
        if scores:
            out[k] = float(np.mean(scores))
    return out


STATE_MAGIC = b"LFS1"


def _adam_arrays(prefix: str, st: AdamState) -> dict:
    out = {}
    for name in st.m:
        out[f"{prefix}/m/{name}"] = _to_numpy(st.m[name])
        out[f"{prefix}/v/{name}"] = _to_numpy(st.v[name])
    return out


def _adam_restore(prefix: str, meta: dict, arrays: dict) -> AdamState:
    st = AdamState(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"], meta["step"])
    for key, arr in arrays.items():
        parts = key.split("/", 2)
        if parts[0] == prefix:
            getattr(st, parts[1])[parts[2]] = arr.copy()
    return st


def save_state(path, state: LightFieldState, cfg: LightFieldConfig, extra: dict | None = None) -> None:
    """LFS1 checkpoint: Gaussians, decoder, both Adam states, iteration and loss history."""
    gs = state.encoding.to_set()
    arrays = {"gauss/mu": gs.mu, "gauss/log_inv_scale": gs.log_inv_scale, "gauss/rot": gs.rot}
    arrays |= {f"decoder/{k}": v for k, v in state.decoder.arrays().items()}
    arrays |= _adam_arrays("adam_dec", state.adam_dec) | _adam_arrays("adam_gauss", state.adam_gauss)

    def meta(st):
        return {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps, "step": st.step}

    header = {"iteration": state.iteration, "losses": state.losses, "config": asdict(cfg),
              "adam_dec": meta(state.adam_dec), "adam_gauss": meta(state.adam_gauss),
              "n_gaussians": len(gs), **(extra or {})}
    Path(path).write_bytes(blob.pack(STATE_MAGIC, arrays, header))


def load_state(path) -> tuple[LightFieldState, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, header = blob.unpack(STATE_MAGIC, path.read_bytes())
    gs = GaussianSet(arrays["gauss/mu"], arrays["gauss/log_inv_scale"], arrays["gauss/rot"])
    dec = SpecularDecoder(len(gs))
    dec.load_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("decoder/")})
    state = LightFieldState(GaussianEncoding(gs), dec,
                            _adam_restore("adam_dec", header["adam_dec"], arrays),
                            _adam_restore("adam_gauss", header["adam_gauss"], arrays),
                            header["iteration"], list(header["losses"]))
    return state, header
