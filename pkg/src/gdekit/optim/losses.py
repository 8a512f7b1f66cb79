"""Loss terms. Written with array operators only, so numpy arrays and torch
tensors both work."""

from __future__ import annotations

from dataclasses import dataclass

G_EPS = 1e-6


def loss_l1_color(pred, target, valid=None):
    """Mean absolute error over valid pixels (all channels)."""
    diff = abs(pred - target)
    if valid is not None:
        if not bool(valid.any()):
            raise ValueError("no valid pixels")
        diff = diff[valid]
    return diff.mean()


def loss_mono_normal(pred_n, mono_n, rotation, valid=None):
    """Mean of ``|n - R n_mono|^2``; ``rotation`` is world-from-view, ``(3,3)`` or per ray ``(M,3,3)``."""
    if pred_n.shape[-1] != 3 or mono_n.shape != pred_n.shape:
        raise ValueError("normal arrays must share shape (..., 3)")
    world = (rotation @ mono_n[..., None])[..., 0]
    err = ((pred_n - world) ** 2).sum(-1)
    if valid is not None:
        err = err[valid]
    return err.mean()


def loss_normal_pred(pred_n, density_grad, g_eps: float = G_EPS):
    """Mean ``|n' - (-g/|g|)|^2`` over samples whose gradient norm exceeds ``g_eps``."""
    sq = (density_grad * density_grad).sum(-1)
    keep = sq > g_eps * g_eps
    if not bool(keep.any()):
        return (pred_n * 0.0).sum()
    g = density_grad[keep]
    target = -g / ((g * g).sum(-1) ** 0.5)[..., None]
    return ((pred_n[keep] - target) ** 2).sum(-1).mean()


def loss_distortion(weights, s_mid, s_delta):
    """Distortion loss per ray, averaged over rays.

    ``weights``, ``s_mid`` and ``s_delta`` are ``(..., S)`` in normalized ray
    distance. Computes sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 ds_i.
    """
    pair = weights[..., :, None] * weights[..., None, :] * abs(s_mid[..., :, None] - s_mid[..., None, :])
    inter = pair.sum((-1, -2))
    intra = (weights * weights * s_delta).sum(-1) / 3.0
    return (inter + intra).mean()


@dataclass
class LossWeights:
    dist: float = 0.002
    mono: float = 1.0
    norm: float = 1e-3
    mono_stop_iter: int = 4000
    early_stop: bool = True

    def mono_weight(self, iteration: int) -> float:
        if iteration < 0:
            raise ValueError("iteration must be non-negative")
        if self.early_stop and iteration >= self.mono_stop_iter:
            return 0.0
        return self.mono


def combined_loss(parts: dict, iteration: int, weights: LossWeights):
    """``L_c + l_dist L_dist + l_mono(iter) L_mono + l_norm L_norm``; missing parts count as 0."""
    total = parts["color"]
    lam_mono = weights.mono_weight(iteration)
    for key, lam in (("dist", weights.dist), ("mono", lam_mono), ("norm", weights.norm)):
        if lam != 0.0 and parts.get(key) is not None:
            total = total + lam * parts[key]
    return total
