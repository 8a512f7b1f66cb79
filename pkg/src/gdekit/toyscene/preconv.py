"""Von Mises-Fisher preconvolution of an environment by Monte Carlo."""

from __future__ import annotations

import numpy as np

from ..geom import normalize


def sample_vmf_local(kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` vMF directions around +z (exact inverse CDF of the 3D vMF).

    Samples come in pairs mirrored in local x, so ``n`` must be even.
    """
    if n % 2:
        raise ValueError("sample count must be even")
    half = _vmf_half(kappa, n // 2, rng)
    return np.concatenate([half, half * [-1.0, 1.0, 1.0]])


def _vmf_half(kappa, n, rng):
    u = rng.uniform(size=n)
    if kappa < 1e-8:
        w = 1.0 - 2.0 * u
    else:
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    r = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    return np.stack([r * np.cos(phi), r * np.sin(phi), w], -1)


def lobe_frame(axis: np.ndarray):
    """Tangent frame built against world +y (or +z near the poles).

    Mirroring the axis in x maps the frame to ``(-M t, M b)``, which together
    with x-mirrored sample pairs keeps preconvolution mirror-equivariant.
    """
    ref = np.where(np.abs(axis[..., 1:2]) > 0.999, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0])
    t = normalize(np.cross(ref, axis))
    return t, np.cross(axis, t)


def rotate_to(local: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Map local +z samples ``(S,3)`` onto frames around ``axis`` ``(M,3)`` -> ``(M,S,3)``."""
    t, b = lobe_frame(axis)
    return (local[None, :, :1] * t[:, None] + local[None, :, 1:2] * b[:, None]
            + local[None, :, 2:] * axis[:, None])


def preconvolve(radiance_fn, x, direction, rho, n_mc: int = 10_000, seed: int = 0,
                chunk: int = 1 << 20) -> np.ndarray:
    """Average of ``radiance_fn(x, w)`` over ``w ~ vMF(direction, 1/rho^2)``.

    Every query shares one seeded set of local-frame samples, so results are
    deterministic and spatially coherent. ``x`` and ``direction`` are ``(3,)``
    or ``(M, 3)``; ``rho`` is scalar.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    direction = normalize(np.atleast_2d(np.asarray(direction, dtype=np.float64)))
    x, direction = np.broadcast_arrays(x, direction)
    local = sample_vmf_local(1.0 / rho**2, n_mc, np.random.default_rng(seed))
    out = np.empty((len(x), 3))
    step = max(1, chunk // n_mc)
    for s in range(0, len(x), step):
        dirs = rotate_to(local, direction[s : s + step])
        origin = np.broadcast_to(x[s : s + step, None, :], dirs.shape)
        out[s : s + step] = radiance_fn(origin, dirs).mean(1)
    return out


def preconvolve_oracle(lights, x, direction, rho, n_mc: int = 10_000, seed: int = 0) -> np.ndarray:
    """Prefiltered light-only radiance at ``x`` toward ``direction`` (single query -> ``(3,)``)."""
    from .lights import toy_env_radiance

    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 1e4")
    single = np.asarray(x).ndim == 1 and np.asarray(direction).ndim == 1
    res = preconvolve(lambda o, d: toy_env_radiance(lights, o, d), x, direction, rho, n_mc, seed)
    return res[0] if single else res
