"""Adam over dicts of numpy arrays or torch tensors."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"OPT1"


def _zeros_like(x):
    if isinstance(x, np.ndarray):
        return np.zeros_like(x)
    return x.detach().clone().zero_()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        """OPT1 framing: header, then per buffer name, shape and float64 data."""
        out = [MAGIC, struct.pack("<Iddddi", self.step, self.lr, self.beta1, self.beta2, self.eps, len(self.m))]
        for name in sorted(self.m):
            m, v = _to_numpy(self.m[name]), _to_numpy(self.v[name])
            key = name.encode()
            out.append(struct.pack("<I", len(key)) + key)
            out.append(struct.pack("<I", m.ndim) + struct.pack(f"<{m.ndim}I", *m.shape))
            out.append(m.astype("<f8").tobytes() + v.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AdamState":
        if blob[:4] != MAGIC:
            raise ValueError("not an OPT1 blob")
        pos = 4
        step, lr, b1, b2, eps, n = struct.unpack_from("<Iddddi", blob, pos)
        pos += struct.calcsize("<Iddddi")
        state = cls(lr, b1, b2, eps, step)
        for _ in range(n):
            (klen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + klen].decode()
            pos += klen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 8
            state.m[name] = np.frombuffer(blob[pos : pos + size], "<f8").reshape(shape).copy()
            pos += size
            state.v[name] = np.frombuffer(blob[pos : pos + size], "<f8").reshape(shape).copy()
            pos += size
        return state


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    return x.detach().cpu().double().numpy()


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Bias-corrected Adam update, applied in place; returns ``params``.

    Torch tensors must be updated under ``torch.no_grad()``.
    """
    if set(grads) - set(params):
        raise ValueError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        p = params[name]
        if tuple(g.shape) != tuple(p.shape):
            raise ValueError(f"shape mismatch for {name}: {tuple(g.shape)} vs {tuple(p.shape)}")
        if name not in state.m:
            state.m[name] = _zeros_like(p)
            state.v[name] = _zeros_like(p)
        elif not isinstance(p, np.ndarray) and isinstance(state.m[name], np.ndarray):
            # buffers restored from a checkpoint
            import torch

            state.m[name] = torch.as_tensor(state.m[name], dtype=p.dtype)
            state.v[name] = torch.as_tensor(state.v[name], dtype=p.dtype)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr / bc1) * m / ((v / bc2) ** 0.5 + state.eps)
    return params
