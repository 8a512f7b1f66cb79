"""Autograd bridge: the numpy encoder and its analytic gradient as a torch op."""

from __future__ import annotations

import numpy as np
import torch

from .gde import GaussianSet, encode, encode_grad
from .geom import Ray


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy()


class GDEFunction(torch.autograd.Function):
    """``(mu, log_inv_scale, rot, origin, direction, rho) -> (M, N)`` encoding."""

    @staticmethod
    def forward(ctx, mu, log_inv_scale, rot, origin, direction, rho):
        ctx.save_for_backward(mu, log_inv_scale, rot, origin, direction, rho)
        gs = GaussianSet(_np(mu), _np(log_inv_scale), _np(rot))
        ray = Ray(_np(origin), _np(direction), np.zeros(len(origin)))
        return torch.from_numpy(encode(gs, ray, _np(rho))).to(mu.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        mu, lis, rot, origin, direction, rho = ctx.saved_tensors
        gs = GaussianSet(_np(mu), _np(lis), _np(rot))
        ray = Ray(_np(origin), _np(direction), np.zeros(len(origin)))
        _, g = encode_grad(gs, ray, _np(rho), _np(grad_out))

        def t(a, like):
            return torch.from_numpy(np.ascontiguousarray(a)).to(like.dtype)

        return (t(g.mu, mu), t(g.log_inv_scale, lis), t(g.rot, rot),
                t(g.origin, origin), t(g.direction, direction), t(g.rho, rho))


class GaussianEncoding(torch.nn.Module):
    """Learnable Gaussian set as float64 parameters."""

    def __init__(self, gs: GaussianSet):
        super().__init__()
        self.mu = torch.nn.Parameter(torch.tensor(gs.mu, dtype=torch.float64))
        self.log_inv_scale = torch.nn.Parameter(torch.tensor(gs.log_inv_scale, dtype=torch.float64))
        self.rot = torch.nn.Parameter(torch.tensor(gs.rot, dtype=torch.float64))
        self.calls = 0

    def __len__(self) -> int:
        return self.mu.shape[0]

    def forward(self, origin, direction, rho) -> torch.Tensor:
        self.calls += 1
        rho = torch.as_tensor(rho, dtype=torch.float64).expand(origin.shape[0])
        return GDEFunction.apply(self.mu, self.log_inv_scale, self.rot,
                                 origin.double(), direction.double(), rho)

    @torch.no_grad()
    def renormalize(self) -> None:
        self.rot /= self.rot.norm(dim=-1, keepdim=True)

    def to_set(self) -> GaussianSet:
        return GaussianSet(_np(self.mu).copy(), _np(self.log_inv_scale).copy(), _np(self.rot).copy())
