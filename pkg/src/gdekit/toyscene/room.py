"""Analytic glossy box room: GT images, normals, depth and the diffuse/specular split."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..geom import Camera, generate_rays
from ..image import (
    ImageBuffer,
    read_mask_pfm,
    read_normal_pfm,
    read_pfm,
    write_mask_pfm,
    write_normal_pfm,
    write_pfm,
)
from .lights import ToyLight, first_light_hit
from .preconv import preconvolve

FLOOR, CEILING, WALL_X0, WALL_X1, WALL_Z0, WALL_Z1, LIGHT = range(7)


def _default_lights() -> list[dict]:
    return [
        {"shape": "disc", "center": [-0.9, 0.0, -0.7], "extent": 0.35, "radiance": [0.95, 0.85, 0.6]},
        {"shape": "rectangle", "center": [0.9, 0.0, -0.6], "extent": 0.5, "radiance": [0.6, 0.8, 0.95]},
        {"shape": "ring", "center": [-0.7, 0.0, 0.9], "extent": 0.4, "radiance": [0.95, 0.55, 0.5]},
        {"shape": "triangle", "center": [0.8, 0.0, 0.8], "extent": 0.45, "radiance": [0.6, 0.95, 0.6]},
    ]


@dataclass
class RoomConfig:
    """Box ``[-hx, hx] x [0, height] x [-hz, hz]`` with a glossy floor and ceiling lights.

    Light centers give x and z; lights hang just below the ceiling.
    """

    half_x: float = 2.0
    half_z: float = 2.0
    height: float = 2.5
    floor_tint: tuple = (0.6, 0.6, 0.6)
    floor_roughness: float = 0.08
    lights: list = field(default_factory=_default_lights)
    n_mc: int = 512
    seed: int = 0
    mirror: bool = False

    @property
    def bbox(self) -> tuple[list[float], list[float]]:
        return [-self.half_x, 0.0, -self.half_z], [self.half_x, self.height, self.half_z]

    def light_objects(self) -> list[ToyLight]:
        out = []
        for spec in self.lights:
            c = np.array(spec["center"], float)
            c[1] = self.height - 1e-3
            lt = ToyLight(spec["shape"], c, spec["extent"], spec["radiance"])
            out.append(lt.mirrored_x() if self.mirror else lt)
        return out

    def mirrored(self) -> "RoomConfig":
        return replace(self, mirror=not self.mirror)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoomConfig":
        d = dict(d)
        d["floor_tint"] = tuple(d.get("floor_tint", cls.floor_tint))
        return cls(**d)


def _texture(cfg: RoomConfig, surf: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Pre-lit diffuse albedo, smooth and low frequency."""
    x = -p[..., 0] if cfg.mirror else p[..., 0]
    y, z = p[..., 1], p[..., 2]
    out = np.zeros(p.shape)
    wave = 0.5 + 0.5 * np.sin(2.1 * x + 0.7) * np.sin(1.7 * z - 0.3)
    floor = np.array([0.10, 0.08, 0.06]) + np.array([0.12, 0.10, 0.07]) * wave[..., None]
    ceiling = np.full(3, 0.2) + 0.05 * np.cos(1.3 * x + 0.9 * z)[..., None]
    band = 0.5 + 0.5 * np.cos(2.5 * y)
    walls = {
        WALL_X0: (np.array([0.55, 0.30, 0.20]), 0.5 + 0.5 * np.sin(1.8 * z)),
        WALL_X1: (np.array([0.20, 0.35, 0.55]), 0.5 + 0.5 * np.sin(1.8 * z + 1.0)),
        WALL_Z0: (np.array([0.45, 0.50, 0.25]), 0.5 + 0.5 * np.sin(1.6 * x)),
        WALL_Z1: (np.array([0.50, 0.40, 0.50]), 0.5 + 0.5 * np.sin(1.6 * x + 2.0)),
    }
    if cfg.mirror:  # mirroring swaps the x walls
        walls[WALL_X0], walls[WALL_X1] = walls[WALL_X1], walls[WALL_X0]
    out[surf == FLOOR] = floor[surf == FLOOR]
    out[surf == CEILING] = ceiling[surf == CEILING]
    for sid, (base, pattern) in walls.items():
        m = surf == sid
        shade = 0.7 + 0.3 * (pattern * band)[..., None]
        out[m] = (base * shade)[m]
    return out


def _box_exit(cfg: RoomConfig, o: np.ndarray, d: np.ndarray):
    """Distance and surface id of the box wall hit from inside."""
    lo, hi = (np.array(b) for b in cfg.bbox)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - o) / d
        t_lo = (lo - o) / d
    t_axis = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf))
    axis = np.argmin(t_axis, -1)
    t = np.take_along_axis(t_axis, axis[..., None], -1)[..., 0]
    positive = np.take_along_axis(d, axis[..., None], -1)[..., 0] > 0
    ids = np.array([[WALL_X0, WALL_X1], [FLOOR, CEILING], [WALL_Z0, WALL_Z1]])
    return t, ids[axis, positive.astype(int)]


NORMALS = {
    FLOOR: (0, 1, 0), CEILING: (0, -1, 0), WALL_X0: (1, 0, 0), WALL_X1: (-1, 0, 0),
    WALL_Z0: (0, 0, 1), WALL_Z1: (0, 0, -1), LIGHT: (0, -1, 0),
}


def trace(cfg: RoomConfig, o: np.ndarray, d: np.ndarray, lights=None):
    """First hit: ``(t, surface id, light index)``; light index -1 for walls."""
    lights = cfg.light_objects() if lights is None else lights
    t_box, surf = _box_exit(cfg, o, d)
    t_light, li = first_light_hit(lights, o, d)
    hit_light = t_light < t_box
    return np.where(hit_light, t_light, t_box), np.where(hit_light, LIGHT, surf), np.where(hit_light, li, -1)


def room_radiance(cfg: RoomConfig, o: np.ndarray, d: np.ndarray, lights=None) -> np.ndarray:
    """Outgoing radiance toward a ray: light emission or pre-lit diffuse albedo (one bounce)."""
    lights = cfg.light_objects() if lights is None else lights
    t, surf, li = trace(cfg, o, d, lights)
    p = o + t[..., None] * d
    table = np.stack([lt.radiance for lt in lights])
    return np.where((surf == LIGHT)[..., None], table[np.maximum(li, 0)], _texture(cfg, surf, p))


def inside_room(cfg: RoomConfig, x) -> bool:
    lo, hi = (np.array(b) for b in cfg.bbox)
    x = np.asarray(x)
    return bool(np.all(x > lo) and np.all(x < hi))


def render_room(cfg: RoomConfig, camera: Camera) -> dict[str, np.ndarray]:
    """GT buffers for one view; ``image = diffuse + tint * specular`` exactly."""
    if not inside_room(cfg, camera.translation):
        raise ValueError("camera outside room")
    lights = cfg.light_objects()
    ray = generate_rays(camera, camera.pixel_centers().reshape(-1, 2))
    o, d = ray.origin, ray.direction
    t, surf, li = trace(cfg, o, d, lights)
    p = o + t[:, None] * d
    normal = np.array([NORMALS[int(s)] for s in range(7)], float)[surf]
    diffuse = room_radiance(cfg, o, d, lights)
    tint = np.zeros_like(diffuse)
    specular = np.zeros_like(diffuse)
    rough = np.zeros(len(d))
    floor = surf == FLOOR
    if floor.any():
        dr = d[floor] * [1.0, -1.0, 1.0]  # reflect about +y
        tint[floor] = cfg.floor_tint
        rough[floor] = cfg.floor_roughness
        specular[floor] = preconvolve(lambda oo, dd: room_radiance(cfg, oo, dd, lights),
                                      p[floor], dr, cfg.floor_roughness, cfg.n_mc, cfg.seed)
    h, w = camera.height, camera.width
    bufs = {
        "image": diffuse + tint * specular,
        "diffuse": diffuse,
        "tint": tint,
        "specular": specular,
        "roughness": rough,
        "normal_world": normal,
        "normal": normal @ camera.rotation,  # view space
        "depth": t,
        "surface": surf,
    }
    return {k: v.reshape((h, w) + v.shape[1:]) for k, v in bufs.items()}


def room_cameras(cfg: RoomConfig, n: int, width: int, height: int, fov_deg: float = 75.0,
                 seed: int = 0, radius: float = 1.3) -> list[Camera]:
    """Cameras on a jittered ring looking down toward the floor, all inside the room."""
    rng = np.random.default_rng(seed)
    cams = []
    for i in range(n):
        a = 2 * np.pi * (i + rng.uniform(-0.3, 0.3)) / n
        r = radius * rng.uniform(0.85, 1.1)
        eye = [r * np.cos(a), rng.uniform(1.4, 1.9), r * np.sin(a)]
        b = a + np.pi + rng.uniform(-0.5, 0.5)
        target = [0.5 * np.cos(b), 0.0, 0.5 * np.sin(b)]
        cams.append(Camera.look_at(eye, target, width, height, fov_deg))
    return cams


@dataclass
class SyntheticDataset:
    cameras: list[Camera]
    views: list[dict]
    config: RoomConfig
    split: dict = field(default_factory=dict)

    def images(self, indices=None) -> list[ImageBuffer]:
        idx = range(len(self.views)) if indices is None else indices
        return [ImageBuffer(self.views[i]["image"], self.views[i]["mask"]) for i in idx]

    @property
    def train(self) -> list[int]:
        return self.split.get("train", list(range(len(self.views))))

    @property
    def val(self) -> list[int]:
        return self.split.get("val", [])


def generate_synthetic_room(cfg: RoomConfig, cameras: list[Camera], val_every: int = 0) -> SyntheticDataset:
    """Render every camera. With ``val_every = k > 0`` every k-th view is held out."""
    views = []
    for cam in cameras:
        v = render_room(cfg, cam)
        v["mask"] = np.ones(v["depth"].shape, bool)
        views.append(v)
    n = len(cameras)
    val = list(range(val_every - 1, n, val_every)) if val_every > 0 else []
    split = {"train": [i for i in range(n) if i not in val], "val": val}
    return SyntheticDataset(list(cameras), views, cfg, split)


GT_BUFFERS = ("diffuse", "tint", "specular")


def save_dataset(ds: SyntheticDataset, out_dir) -> None:
    out = Path(out_dir)
    for sub in ("images", "normals", "depth", "masks", "roughness") + GT_BUFFERS:
        (out / sub).mkdir(parents=True, exist_ok=True)
    meta = {
        "cameras": [c.to_dict() for c in ds.cameras],
        "split": ds.split,
        "room": ds.config.to_dict(),
    }
    (out / "cameras.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for i, v in enumerate(ds.views):
        name = f"{i:04d}.pfm"
        write_pfm(out / "images" / name, v["image"])
        write_normal_pfm(out / "normals" / name, v["normal"])
        write_pfm(out / "depth" / name, v["depth"][..., None])
        write_pfm(out / "roughness" / name, v["roughness"][..., None])
        write_mask_pfm(out / "masks" / name, v["mask"])
        for key in GT_BUFFERS:
            write_pfm(out / key / name, v[key])


def load_dataset(path) -> SyntheticDataset:
    root = Path(path)
    meta_path = root / "cameras.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no cameras.json in {root}")
    meta = json.loads(meta_path.read_text())
    cams = [Camera.from_dict(c) for c in meta["cameras"]]
    views = []
    for i in range(len(cams)):
        name = f"{i:04d}.pfm"
        v = {
            "image": read_pfm(root / "images" / name),
            "normal": read_normal_pfm(root / "normals" / name),
            "depth": read_pfm(root / "depth" / name)[..., 0],
            "mask": read_mask_pfm(root / "masks" / name),
        }
        for key in GT_BUFFERS + ("roughness",):
            p = root / key / name
            if p.exists():
                arr = read_pfm(p)
                v[key] = arr[..., 0] if key == "roughness" else arr
        views.append(v)
    room = RoomConfig.from_dict(meta["room"]) if "room" in meta else RoomConfig()
    return SyntheticDataset(cams, views, room, meta.get("split", {}))
