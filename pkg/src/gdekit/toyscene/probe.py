"""Hemisphere probe under a row of lights: SH vs Gaussian encodings with equal coefficient budgets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..gde import GaussianSet, encode, encode_grad
from ..geom import Ray, fibonacci_hemisphere, stereographic_unproject
from ..image import ImageBuffer
from ..sh import sh_basis
from .lights import ToyLight
from .preconv import preconvolve_oracle

ENCODINGS = ("sh", "gde")

# local probe frame (z toward the lights) -> world (y up); proper rotation
LOCAL_TO_WORLD = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass
class ProbeTrack:
    positions: np.ndarray
    n_dirs: int = 512

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 2:
            raise ValueError("a probe track needs at least 2 positions")

    @classmethod
    def line(cls, n: int = 4, spread: float = 1.5, n_dirs: int = 512) -> "ProbeTrack":
        xs = np.linspace(-spread, spread, n)
        return cls(np.stack([xs, np.zeros(n), np.zeros(n)], -1), n_dirs)

    def directions(self) -> np.ndarray:
        """World-space unit normals of the probe hemisphere (facing +y)."""
        return fibonacci_hemisphere(self.n_dirs) @ LOCAL_TO_WORLD.T


@dataclass
class ProbeConfig:
    sh_degree: int = 4
    n_gaussians: int = 25
    rho: float = 0.1
    n_mc: int = 10_000
    iterations: int = 400
    lr: float = 0.03
    ridge: float = 1e-4
    seed: int = 0


@dataclass
class FitReport:
    encoding: str
    positions: np.ndarray
    coeffs: np.ndarray  # (P, K, 3)
    mse: np.ndarray  # (P,)
    gaussians: GaussianSet | None = None
    history: list = field(default_factory=list)

    @property
    def total_mse(self) -> float:
        return float(self.mse.mean())

    @property
    def variation(self) -> float:
        return variation_score(self.coeffs)

    def rows(self):
        for p, c in np.ndindex(self.coeffs.shape[0], 3):
            for k in range(self.coeffs.shape[1]):
                yield self.encoding, p, c, k, float(self.coeffs[p, k, c])


def variation_score(coeffs: np.ndarray) -> float:
    """Mean over coefficients of std across positions over ``|mean| + 1e-6``."""
    return float(np.mean(coeffs.std(0) / (np.abs(coeffs.mean(0)) + 1e-6)))


def probe_targets(lights: list[ToyLight], track: ProbeTrack, rho: float, n_mc: int = 10_000,
                  seed: int = 0) -> np.ndarray:
    """Preconvolved light radiance ``(P, D, 3)`` on the probe's direction grid."""
    dirs = track.directions()
    return np.stack([preconvolve_oracle(lights, x, dirs, rho, n_mc, seed) for x in track.positions])


def probe_bbox(lights: list[ToyLight], track: ProbeTrack):
    pts = np.vstack([track.positions] + [lt.center for lt in lights])
    pad = max(lt.extent for lt in lights)
    return pts.min(0) - pad, pts.max(0) + pad


def _basis(encoding: str, gs: GaussianSet | None, x: np.ndarray, dirs: np.ndarray, rho: float, degree: int):
    if encoding == "sh":
        return sh_basis(dirs, degree)
    return encode(gs, Ray(np.broadcast_to(x, dirs.shape), dirs), rho)


def _solve(basis: np.ndarray, target: np.ndarray, ridge: float) -> np.ndarray:
    k = basis.shape[1]
    gram = basis.T @ basis + ridge * len(basis) * np.eye(k)
    return np.linalg.solve(gram, basis.T @ target)


def _solve_all(encoding, gs, track, targets, cfg):
    dirs = track.directions()
    coeffs, bases = [], []
    for x, y in zip(track.positions, targets):
        b = _basis(encoding, gs, x, dirs, cfg.rho, cfg.sh_degree)
        bases.append(b)
        coeffs.append(_solve(b, y, cfg.ridge))
    return np.stack(bases), np.stack(coeffs)


def _mse(bases, coeffs, targets) -> np.ndarray:
    return np.mean((np.einsum("pdk,pkc->pdc", bases, coeffs) - targets) ** 2, axis=(1, 2))


def projected_loss(gs: GaussianSet, track: ProbeTrack, targets: np.ndarray, cfg: ProbeConfig):
    """Total MSE with coefficients at their least-squares optimum, and its Gaussian gradients.

    At the optimum the coefficient sensitivity drops out (variable projection),
    so the gradient is the encoding gradient with upstream ``2 r c^T``.
    Exact for ``ridge = 0``; the ridge term adds ``O(ridge)``.
    """
    dirs = track.directions()
    n_el = targets[0].size * len(targets)
    grads = {k: np.zeros_like(v) for k, v in gs.params().items()}
    loss = 0.0
    for x, y in zip(track.positions, targets):
        ray = Ray(np.broadcast_to(x, dirs.shape), dirs)
        basis = encode(gs, ray, cfg.rho)
        c = _solve(basis, y, cfg.ridge)
        r = basis @ c - y
        loss += float((r * r).sum()) / n_el
        _, g = encode_grad(gs, ray, cfg.rho, 2.0 * r @ c.T / n_el)
        for k, val in g.gaussian_grads().items():
            grads[k] += val
    return loss, grads


def _optimize_gaussians(gs: GaussianSet, track: ProbeTrack, targets: np.ndarray, cfg: ProbeConfig):
    params = gs.params()
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for it in range(1, cfg.iterations + 1):
        loss, grads = projected_loss(gs, track, targets, cfg)
        history.append(loss)
        for k, p in gs.params().items():
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            p -= cfg.lr * (m[k] / (1 - b1**it)) / (np.sqrt(v[k] / (1 - b2**it)) + eps)
        gs.renormalize()
    return history


def fit_coefficients(encoding: str, track: ProbeTrack, targets: np.ndarray, cfg: ProbeConfig | None = None,
                     lights: list[ToyLight] | None = None, gaussians: GaussianSet | None = None) -> FitReport:
    """Per-position least-squares coefficients for one encoding.

    For ``"gde"`` the Gaussians start from ``gaussians`` (or a seeded layout
    over the lights' bounding box) and are optimized across all positions.
    """
    cfg = cfg or ProbeConfig()
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[:2] != (len(track.positions), track.n_dirs):
        raise ValueError("targets do not match the probe track")
    if not np.any(targets):
        raise ValueError("degenerate (all-zero) targets")
    gs, history = None, []
    if encoding == "gde":
        if gaussians is not None:
            gs = gaussians.copy()
        else:
            if lights is None:
                raise ValueError("gde fit needs lights or initial Gaussians")
            gs = GaussianSet.default_init(*probe_bbox(lights, track), n=cfg.n_gaussians, rng=cfg.seed)
        history = _optimize_gaussians(gs, track, targets, cfg)
    bases, coeffs = _solve_all(encoding, gs, track, targets, cfg)
    return FitReport(encoding, track.positions.copy(), coeffs, _mse(bases, coeffs, targets), gs, history)


def compare_encodings(lights: list[ToyLight], track: ProbeTrack, cfg: ProbeConfig | None = None) -> dict:
    cfg = cfg or ProbeConfig()
    targets = probe_targets(lights, track, cfg.rho, cfg.n_mc, cfg.seed)
    return {enc: fit_coefficients(enc, track, targets, cfg, lights) for enc in ENCODINGS}


def write_reports(reports: dict, out_dir, extra: dict | None = None) -> dict:
    """``coefficients.csv`` (encoding, position, channel, index, value) and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "coefficients.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["encoding", "position", "channel", "coefficient", "value"])
        for rep in reports.values():
            w.writerows(rep.rows())
    summary = {
        **(extra or {}),
        **{f"{k}_mse": r.total_mse for k, r in reports.items()},
        **{f"{k}_variation": r.variation for k, r in reports.items()},
        **{f"{k}_mse_per_position": r.mse.tolist() for k, r in reports.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def render_stereographic(encoding: str, coeffs: np.ndarray, x, rho: float, resolution: int,
                         gaussians: GaussianSet | None = None, sh_degree: int = 4) -> ImageBuffer:
    """Stereographic view of ``basis(x, w) @ coeffs`` over the probe hemisphere.

    Pixels span ``[-1, 1]^2`` in the projection plane; the unit disc is the
    hemisphere facing the lights, corners fall below the horizon.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    if encoding == "gde" and gaussians is None:
        raise ValueError("gde rendering needs the Gaussians")
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    t, s = np.meshgrid(c, c, indexing="ij")
    local = stereographic_unproject(np.stack([s, -t], -1).reshape(-1, 2))
    dirs = local @ LOCAL_TO_WORLD.T
    vals = _basis(encoding, gaussians, np.asarray(x, float), dirs, rho, sh_degree) @ np.asarray(coeffs)
    return ImageBuffer(vals.reshape(resolution, resolution, -1))

