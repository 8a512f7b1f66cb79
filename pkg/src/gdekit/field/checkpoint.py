"""FLD1 model checkpoints: field, Gaussians and decoder in one blob plus a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .. import blob
from ..gde import GaussianSet
from ..gde_torch import GaussianEncoding
from ..optim.lightfield import SpecularDecoder
from .model import TINT_SH_DEGREE, FieldConfig, SceneField

MAGIC = b"FLD1"
ACTIVATIONS = {"density": "exp", "diffuse": "sigmoid", "tint": "sigmoid", "roughness": "softplus",
               "normal": "none", "tint_sh_degree": TINT_SH_DEGREE}


def _state_arrays(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}/{k}": v.detach().double().numpy() for k, v in module.state_dict().items()}


def save_model(path, f: SceneField, enc: GaussianEncoding, dec: SpecularDecoder, bbox,
               extra: dict | None = None) -> None:
    arrays = _state_arrays("field", f) | _state_arrays("decoder", dec)
    gs = enc.to_set()
    arrays |= {"gauss/mu": gs.mu, "gauss/log_inv_scale": gs.log_inv_scale, "gauss/rot": gs.rot}
    header = {"field": f.cfg.to_dict(), "bbox": [list(map(float, b)) for b in bbox],
              "n_gaussians": len(gs), "activations": ACTIVATIONS, **(extra or {})}
    path = Path(path)
    path.write_bytes(blob.pack(MAGIC, arrays, header))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def _load_state(module: torch.nn.Module, arrays: dict, prefix: str) -> None:
    ref = module.state_dict()
    module.load_state_dict({k: torch.tensor(arrays[f"{prefix}/{k}"], dtype=ref[k].dtype) for k in ref})


def load_model(path):
    """Returns ``(field, encoding, decoder, header)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, header = blob.unpack(MAGIC, path.read_bytes())
    f = SceneField(*header["bbox"], FieldConfig.from_dict(header["field"]))
    _load_state(f, arrays, "field")
    gs = GaussianSet(arrays["gauss/mu"], arrays["gauss/log_inv_scale"], arrays["gauss/rot"])
    enc = GaussianEncoding(gs)
    dec = SpecularDecoder(len(gs))
    _load_state(dec, arrays, "decoder")
    return f, enc, dec, header
