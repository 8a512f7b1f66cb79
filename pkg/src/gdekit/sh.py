"""Real spherical-harmonics basis up to degree 4.

Ordering is ``(l, m)`` with ``m = -l..l``; no Condon-Shortley phase, so the
first band reads ``(c*y, c*z, c*x)``.
"""

import numpy as np

MAX_DEGREE = 4


def sh_basis(dirs, max_degree: int):
    """Evaluate ``(max_degree + 1)**2`` real SH values for unit ``dirs``.

    Accepts numpy arrays or torch tensors; the result has the input's type.
    """
    if not 0 <= max_degree <= MAX_DEGREE:
        raise ValueError(f"max_degree must be in [0, {MAX_DEGREE}], got {max_degree}")
    if hasattr(dirs, "detach"):
        import torch

        d, stack = dirs, torch.stack
    else:
        d, stack = np.asarray(dirs, dtype=np.float64), np.stack
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [x * 0 + 0.28209479177387814]
    if max_degree >= 1:
        c1 = 0.4886025119029199
        out += [c1 * y, c1 * z, c1 * x]
    if max_degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (3 * zz - 1),
            1.0925484305920792 * x * z,
            0.5462742152960396 * (xx - yy),
        ]
    if max_degree >= 3:
        out += [
            0.5900435899266435 * y * (3 * xx - yy),
            2.890611442640554 * x * y * z,
            0.4570457994644658 * y * (5 * zz - 1),
            0.3731763325901154 * z * (5 * zz - 3),
            0.4570457994644658 * x * (5 * zz - 1),
            1.445305721320277 * z * (xx - yy),
            0.5900435899266435 * x * (xx - 3 * yy),
        ]
    if max_degree >= 4:
        out += [
            2.5033429417967046 * x * y * (xx - yy),
            1.7701307697799304 * y * z * (3 * xx - yy),
            0.9461746957575601 * x * y * (7 * zz - 1),
            0.6690465435572892 * y * z * (7 * zz - 3),
            0.10578554691520431 * (35 * zz * zz - 30 * zz + 3),
            0.6690465435572892 * x * z * (7 * zz - 3),
            0.47308734787878004 * (xx - yy) * (7 * zz - 1),
            1.7701307697799304 * x * z * (xx - 3 * yy),
            0.6258357354491761 * (xx * (xx - 3 * yy) - yy * (3 * xx - yy)),
        ]
    return stack(out, -1)
