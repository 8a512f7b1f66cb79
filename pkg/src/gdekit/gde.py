"""Gaussian directional encoding.

Each Gaussian ``G(x) = exp(-|S R^T (x - mu)|^2)`` (``S = diag(inv_scale)``,
``R`` the rotation of ``rot``) is projected onto a ray ``o + t d`` by taking
its maximum over ``t >= 0``, which has a closed form. Roughness ``rho``
multiplies every scale, i.e. divides the inverse scales.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import encode_kernel, grad_kernel
from .geom import Ray, quat_matrix_jacobian, quat_normalize, quat_to_matrix

RHO_MIN = 1e-3
DEFAULT_COUNT = 256
MAGIC = b"GDE1"


@dataclass
class GaussianParams:
    mu: np.ndarray
    log_inv_scale: np.ndarray
    rot: np.ndarray

    @property
    def inv_scale(self) -> np.ndarray:
        return np.exp(self.log_inv_scale)


@dataclass
class GaussianSet:
    """``N`` Gaussians as stacked arrays: ``mu (N,3)``, ``log_inv_scale (N,3)``, ``rot (N,4)``."""

    mu: np.ndarray
    log_inv_scale: np.ndarray
    rot: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        self.log_inv_scale = np.asarray(self.log_inv_scale, dtype=np.float64).reshape(-1, 3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(-1, 4)
        if not len(self.mu) == len(self.log_inv_scale) == len(self.rot) >= 1:
            raise ValueError("GaussianSet needs N >= 1 consistent Gaussians")

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> GaussianParams:
        return GaussianParams(self.mu[i].copy(), self.log_inv_scale[i].copy(), self.rot[i].copy())

    @classmethod
    def from_params(cls, params: list[GaussianParams]) -> "GaussianSet":
        return cls(
            np.stack([p.mu for p in params]),
            np.stack([p.log_inv_scale for p in params]),
            np.stack([p.rot for p in params]),
        )

    @classmethod
    def default_init(cls, bbox_min, bbox_max, n: int = DEFAULT_COUNT, rng=None) -> "GaussianSet":
        """Uniform centers in the bbox inflated by 25%, isotropic sigma = 10% of its diagonal."""
        rng = np.random.default_rng(rng)
        lo, hi = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * 1.25
        mu = rng.uniform(center - half, center + half, size=(n, 3))
        sigma = 0.1 * np.linalg.norm(hi - lo)
        rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        return cls(mu, np.full((n, 3), -np.log(sigma)), rot)

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.mu.copy(), self.log_inv_scale.copy(), self.rot.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu, "log_inv_scale": self.log_inv_scale, "rot": self.rot}

    def renormalize(self) -> None:
        self.rot[:] = quat_normalize(self.rot)

    def to_bytes(self) -> bytes:
        body = np.concatenate([self.mu, self.log_inv_scale, self.rot], axis=1).astype("<f4")
        return MAGIC + struct.pack("<I", len(self)) + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GaussianSet":
        if blob[:4] != MAGIC:
            raise ValueError("not a GDE1 blob")
        (n,) = struct.unpack("<I", blob[4:8])
        body = np.frombuffer(blob[8 : 8 + 40 * n], dtype="<f4").reshape(n, 10).astype(np.float64)
        return cls(body[:, :3], body[:, 3:6], body[:, 6:])

    def save(self, path, bbox=None) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        meta = {"format": "GDE1", "count": len(self), "bbox": bbox}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "GaussianSet":
        return cls.from_bytes(Path(path).read_bytes())


def _as_arrays(g):
    return np.asarray(g.mu), np.asarray(g.log_inv_scale), np.asarray(g.rot)


def _effective_inv_scale(log_inv_scale, rho):
    return np.exp(log_inv_scale) / rho


def to_local(g, ray: Ray, rho=1.0):
    """Ray origin and direction in the Gaussian's normalized frame.

    ``g`` is a single :class:`GaussianParams`; ray arrays may be batched.
    """
    mu, lis, rot = _as_arrays(g)
    r = quat_to_matrix(rot)
    psi = _effective_inv_scale(lis, rho)
    o_loc = ((ray.origin - mu) @ r) * psi
    d_loc = (ray.direction @ r) * psi
    return o_loc, d_loc


def _log_project(a: np.ndarray, b: np.ndarray):
    aa = np.sum(a * a, -1)
    ab = np.sum(a * b, -1)
    bb = np.sum(b * b, -1)
    approaching = ab < 0
    log_p = np.where(approaching, ab * ab / bb - aa, -aa)
    return log_p, approaching, ab, bb


def project_max(g, ray: Ray, rho: float = 1.0) -> np.ndarray:
    """Maximum of Gaussian ``g`` along ``ray`` for ``t >= 0`` (closed form)."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    a, b = to_local(g, ray, rho[..., None] if rho.ndim else rho)
    return np.exp(_log_project(a, b)[0])


def gaussian_log_value(g, x: np.ndarray, rho: float = 1.0) -> np.ndarray:
    """log G(x) via the precision matrix ``R S^2 R^T``."""
    mu, lis, rot = _as_arrays(g)
    r = quat_to_matrix(rot)
    prec = r @ np.diag(_effective_inv_scale(lis, rho) ** 2) @ r.T
    dx = np.asarray(x, dtype=np.float64) - mu
    return -np.einsum("...i,ij,...j->...", dx, prec, dx)


def brute_force_project(g, ray: Ray, rho: float = 1.0, t_max: float | None = None,
                        n_samples: int = 100_000) -> float:
    """Dense-sampling maximum of ``G(o + t d)`` over ``t in [0, t_max]``.

    ``t_max`` is extended until the Gaussian has decayed below 1e-12 of the
    running maximum and is no longer increasing. The best sample is refined
    by golden-section search. Evaluates a single ray.
    """
    if n_samples < 100_000:
        raise ValueError("n_samples must be at least 1e5")
    o = np.asarray(ray.origin, dtype=np.float64).reshape(3)
    d = np.asarray(ray.direction, dtype=np.float64).reshape(3)

    # log G(o + t d) is a quadratic in t; expand once through the precision matrix
    mu, lis, rot = _as_arrays(g)
    r = quat_to_matrix(rot)
    prec = r @ np.diag(_effective_inv_scale(lis, rho) ** 2) @ r.T
    dx = o - mu
    c0, c1, c2 = dx @ prec @ dx, dx @ prec @ d, d @ prec @ d

    def logg(t):
        t = np.asarray(t, dtype=np.float64)
        return -(c0 + t * (2.0 * c1 + t * c2))

    t_max = 1.0 if t_max is None else float(t_max)
    cutoff = np.log(1e-12)
    while True:
        ts = np.linspace(0.0, t_max, n_samples)
        vals = logg(ts)
        best = int(np.argmax(vals))
        rising = vals[-1] >= vals[-2]
        if vals[-1] - vals[best] < cutoff and not rising:
            break
        t_max *= 2.0
    h = ts[1] - ts[0]
    lo, hi = max(0.0, ts[best] - h), min(t_max, ts[best] + h)
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    c, e = hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo)
    fc, fe = logg(c), logg(e)
    for _ in range(200):
        if hi - lo < 1e-15 * max(1.0, hi):
            break
        if fc > fe:
            hi, e, fe = e, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = logg(c)
        else:
            lo, c, fc = c, e, fe
            e = lo + inv_phi * (hi - lo)
            fe = logg(e)
    return float(np.exp(max(vals[best], fc, fe, logg(lo), logg(hi))))


def _clamp_rho(rho, n_rays):
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (n_rays,))
    return np.maximum(rho, RHO_MIN), rho >= RHO_MIN


def _batch_local(gs: GaussianSet, ray: Ray, rho_eff: np.ndarray):
    r = quat_to_matrix(gs.rot)  # (N,3,3)
    psi = np.exp(gs.log_inv_scale)[None] / rho_eff[:, None, None]  # (M,N,3)
    w = ray.origin[:, None, :] - gs.mu[None]  # (M,N,3)
    u = np.einsum("nji,mnj->mni", r, w)
    v = np.einsum("nji,mj->mni", r, ray.direction)
    return r, psi, w, u, v


def _as_batch(ray: Ray):
    if ray.origin.ndim == 1:
        return Ray(ray.origin[None], ray.direction[None], ray.base_radius[None]), True
    return ray, False


def encode_reference(gs: GaussianSet, ray: Ray, rho) -> np.ndarray:
    """Vectorized numpy form of :func:`encode`, kept as a cross-check."""
    ray, single = _as_batch(ray)
    rho_eff, _ = _clamp_rho(rho, len(ray))
    _, psi, _, u, v = _batch_local(gs, ray, rho_eff)
    out = np.exp(_log_project(u * psi, v * psi)[0])
    return out[0] if single else out


def encode(gs: GaussianSet, ray: Ray, rho) -> np.ndarray:
    """Encoding matrix ``(M, N)`` for ``M`` rays; ``rho`` scalar or per ray, floored at RHO_MIN."""
    ray, single = _as_batch(ray)
    rho_eff, _ = _clamp_rho(rho, len(ray))
    out = encode_kernel(gs.mu, gs.log_inv_scale, quat_to_matrix(gs.rot),
                        np.ascontiguousarray(ray.origin, dtype=np.float64),
                        np.ascontiguousarray(ray.direction, dtype=np.float64), rho_eff)
    return out[0] if single else out


@dataclass
class EncodingGrad:
    mu: np.ndarray
    log_inv_scale: np.ndarray
    rot: np.ndarray
    origin: np.ndarray
    direction: np.ndarray
    rho: np.ndarray

    def gaussian_grads(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu, "log_inv_scale": self.log_inv_scale, "rot": self.rot}


def _rot_grad(gs: GaussianSet, acc: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(gs.rot, axis=-1, keepdims=True)
    qhat = gs.rot / qn
    g_qhat = np.einsum("nkij,nij->nk", quat_matrix_jacobian(qhat), acc)
    return (g_qhat - np.sum(g_qhat * qhat, -1, keepdims=True) * qhat) / qn


def encode_grad(gs: GaussianSet, ray: Ray, rho, upstream: np.ndarray):
    """Analytic gradient of ``sum(upstream * encode(gs, ray, rho))``.

    Returns ``(values, EncodingGrad)``. Gaussian gradients are summed over
    rays; ray gradients are per ray. The rotation gradient is taken through
    quaternion normalization, so it lies in the tangent space of the unit
    sphere at ``rot``. On the branch boundary (``o.d == 0`` in local space)
    the receding-branch derivative is used.
    """
    m = len(ray)
    upstream = np.ascontiguousarray(np.asarray(upstream, dtype=np.float64).reshape(m, len(gs)))
    rho_eff, active = _clamp_rho(rho, m)
    p, g_mu, g_lis, acc, g_o, g_d, g_rho = grad_kernel(
        gs.mu, gs.log_inv_scale, quat_to_matrix(gs.rot),
        np.ascontiguousarray(ray.origin, dtype=np.float64),
        np.ascontiguousarray(ray.direction, dtype=np.float64), rho_eff, active, upstream)
    return p, EncodingGrad(g_mu, g_lis, _rot_grad(gs, acc), g_o, g_d, g_rho)


def encode_grad_reference(gs: GaussianSet, ray: Ray, rho, upstream: np.ndarray):
    """Vectorized numpy form of :func:`encode_grad`, kept as a cross-check."""
    m = len(ray)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(m, len(gs))
    rho_eff, active = _clamp_rho(rho, m)
    r, psi, w, u, v = _batch_local(gs, ray, rho_eff)
    a, b = u * psi, v * psi
    log_p, approaching, ab, bb = _log_project(a, b)
    p = np.exp(log_p)
    gp = upstream * p  # dL/dlogP
    k = np.where(approaching, ab / bb, 0.0)[..., None]
    ga = gp[..., None] * (2.0 * k * b - 2.0 * a)
    gb = gp[..., None] * (2.0 * k * a - 2.0 * k * k * b)

    gu, gv = ga * psi, gb * psi
    g_origin = np.einsum("nij,mnj->mi", r, gu)
    g_dir = np.einsum("nij,mnj->mi", r, gv)
    g_mu = -np.einsum("nij,mnj->ni", r, gu)
    scale_term = ga * a + gb * b  # d/d(log psi_eff)
    g_lis = scale_term.sum(0)
    g_rho = np.where(active, -scale_term.sum((1, 2)) / rho_eff, 0.0)

    acc = np.einsum("mni,mnj->nij", w, gu) + np.einsum("mi,mnj->nij", ray.direction, gv)
    return p, EncodingGrad(g_mu, g_lis, _rot_grad(gs, acc), g_origin, g_dir, g_rho)
