"""``gdekit`` command line: dataset generation, initialization, training, rendering, evaluation."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import platform
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__

SUBSTREAMS = ("dataset", "init", "train", "mc-oracle")

DEFAULTS = {
    "seed": 0,
    "n_gaussians": 256,
    "room": {},
    "dataset": {"views": 20, "width": 64, "height": 48, "fov": 75.0, "val_every": 5},
    "lightfield": {"iterations": 2000, "batch": 4096, "lr": 1e-3},
    "train": {
        "iterations": 800, "batch": 512, "lr": 5e-3, "lr_gauss": 1e-3, "lr_decoder": 1e-3,
        "n_samples": 32, "n_importance": 16, "lambda_dist": 0.002, "lambda_mono": 1.0,
        "lambda_norm": 1e-3, "mono_stop_iter": 32, "val_every": 200, "field": {},
    },
    "probe": {"layouts": [0, 1, 2, 3, 4], "positions": 4, "spread": 1.5, "n_dirs": 512, "rho": 0.1,
              "n_mc": 10_000, "iterations": 400, "lr": 0.03, "ridge": 1e-4, "resolution": 48},
}


class UsageError(Exception):
    """Bad input from the user; exit code 2."""


# --- configuration ----------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def validate(cfg: dict) -> None:
    t = cfg["train"]
    for k in ("lambda_dist", "lambda_mono", "lambda_norm", "lr", "lr_gauss", "lr_decoder"):
        if t[k] < 0:
            raise UsageError(f"train.{k} must be >= 0")
    counts = [("n_gaussians", cfg["n_gaussians"]), ("train.iterations", t["iterations"]),
              ("train.batch", t["batch"]), ("lightfield.iterations", cfg["lightfield"]["iterations"]),
              ("lightfield.batch", cfg["lightfield"]["batch"]), ("dataset.views", cfg["dataset"]["views"])]
    for name, v in counts:
        if int(v) < 1:
            raise UsageError(f"{name} must be >= 1")


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except FileNotFoundError as exc:
            raise UsageError(f"config not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(cfg, key, value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        _set_path(cfg, args.iterations_key, args.iterations)
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def substream(root: int, name: str) -> int:
    """Independent 32-bit seed for a named stage, derived from the root seed."""
    return int(np.random.SeedSequence([int(root), zlib.crc32(name.encode())]).generate_state(1)[0])


def substreams(root: int) -> dict[str, int]:
    return {name: substream(root, name) for name in SUBSTREAMS}


def versions() -> dict:
    import numba
    import scipy
    import torch

    return {"gdekit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__, "numba": numba.__version__}


def write_manifest(path, command: str, cfg: dict, args, extra: dict | None = None) -> dict:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "substreams": substreams(cfg["seed"]),
        "threads": args.threads,
        "versions": versions(),
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _mkdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {p}: {exc.strerror or exc}") from exc
    return p


def _room(cfg: dict):
    from .toyscene import RoomConfig

    room = RoomConfig.from_dict(cfg["room"]) if cfg["room"] else RoomConfig()
    room.seed = substream(cfg["seed"], "mc-oracle")
    return room


def _load_dataset(path):
    from .toyscene import load_dataset

    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


# --- commands ---------------------------------------------------------------


def cmd_gen_synthetic(args, cfg) -> int:
    from .toyscene import generate_synthetic_room, room_cameras, save_dataset

    out = _mkdir(args.out)
    room, d = _room(cfg), cfg["dataset"]
    cams = room_cameras(room, int(d["views"]), int(d["width"]), int(d["height"]), float(d["fov"]),
                        seed=substream(cfg["seed"], "dataset"))
    ds = generate_synthetic_room(room, cams, val_every=int(d["val_every"]))
    save_dataset(ds, out)
    write_manifest(out / "manifest.json", "gen-synthetic", cfg, args, {"views": len(cams)})
    print(f"wrote {len(cams)} views to {out}")
    return 0


def _train_images(ds):
    from .optim import build_ray_dataset

    idx = ds.train
    images, cams = ds.images(idx), [ds.cameras[i] for i in idx]
    if not images:
        raise UsageError("empty dataset: no training views")
    data = build_ray_dataset(images, cams)
    if len(data) == 0:
        raise UsageError("empty dataset: no valid pixels")
    return data


def _fresh_init(cfg, room_bbox):
    from .gde import GaussianSet
    from .optim import SpecularDecoder

    seed = substream(cfg["seed"], "init")
    gs = GaussianSet.default_init(*room_bbox, n=int(cfg["n_gaussians"]), rng=seed)
    return gs, SpecularDecoder(len(gs), seed=seed % 2**31)


def _lightfield_cfg(cfg):
    from .optim import LightFieldConfig

    lf = cfg["lightfield"]
    return LightFieldConfig(iterations=int(lf["iterations"]), batch=int(lf["batch"]), lr=float(lf["lr"]),
                            seed=substream(cfg["seed"], "init"))


def _run_init(ds, cfg, state=None, log=None):
    from .optim import fit_light_field

    data = _train_images(ds)
    lcfg = _lightfield_cfg(cfg)
    gs, dec = _fresh_init(cfg, ds.config.bbox)
    cb = None
    if log:
        def cb(it, loss):
            if it % 100 == 0 or it == lcfg.iterations:
                print(f"init {it:6d}  L1 {loss:.5f}", flush=True)
    return fit_light_field(data, gs, dec, lcfg, state=state, callback=cb), lcfg


def cmd_fit_lightfield(args, cfg) -> int:
    from .optim import blurred_view_psnr, load_state, save_state

    ds = _load_dataset(args.dataset)
    state = None
    if args.resume:
        try:
            state, _ = load_state(args.resume)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
    state, lcfg = _run_init(ds, cfg, state, log=not args.quiet)
    out = Path(args.out)
    _mkdir(out.parent)
    metrics = {"iterations": state.iteration, "final_loss": state.losses[-1] if state.losses else None}
    if ds.val:
        per_level = blurred_view_psnr(state, ds.images(ds.val), [ds.cameras[i] for i in ds.val])
        metrics["val_psnr_per_kernel"] = {str(k): v for k, v in per_level.items()}
        metrics["val_blurred_psnr"] = float(np.mean([v for k, v in per_level.items() if k > 1]))
    save_state(out, state, lcfg, {"bbox": ds.config.bbox})
    with open(f"{out}.loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(state.losses))
    Path(f"{out}.metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    write_manifest(f"{out}.manifest.json", "fit-lightfield", cfg, args,
                   {"dataset": str(args.dataset), "resume": args.resume})
    print(json.dumps(metrics))
    return 0


def _train_config(cfg, args):
    from .field import TrainConfig

    t = dict(cfg["train"])
    t["seed"] = substream(cfg["seed"], "train")
    if args.no_gauss_opt:
        t["optimize_gaussians"] = False
    if args.no_mono:
        t["lambda_mono"] = 0.0
    if args.no_early_stop:
        t["early_stop"] = False
    if args.diffuse_only:
        t["diffuse_only"] = True
    return TrainConfig(**t)


def _views(ds, idx):
    from .field import View

    return [View(ds.images([i])[0], ds.cameras[i], ds.views[i]["normal"]) for i in idx]


def _write_buffers(out: Path, index: int, buf: dict, camera) -> None:
    from .image import write_mask_pfm, write_normal_pfm, write_pfm

    name = f"{index:04d}.pfm"
    for sub in ("images", "normals", "masks", "diffuse", "specular", "tint", "roughness", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_pfm(out / "images" / name, buf["color"])
    write_normal_pfm(out / "normals" / name, buf["normal"] @ camera.rotation)  # view space
    write_mask_pfm(out / "masks" / name, buf["opacity"] > 0.5)
    for key in ("diffuse", "specular", "tint"):
        write_pfm(out / key / name, buf[key])
    write_pfm(out / "roughness" / name, buf["roughness"][..., None])
    write_pfm(out / "depth" / name, buf["depth"][..., None])


def cmd_train(args, cfg) -> int:
    import torch

    from .field import evaluate, render_views, save_model, train_field
    from .gde_torch import GaussianEncoding
    from .optim import load_state

    if args.no_init and args.init:
        raise UsageError("--no-init and --init are mutually exclusive")
    ds = _load_dataset(args.dataset)
    out = _mkdir(args.out)
    if args.no_init:
        gs, dec = _fresh_init(cfg, ds.config.bbox)
        enc, init_source = GaussianEncoding(gs), "none"
    elif args.init:
        try:
            state, _ = load_state(args.init)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
        enc, dec, init_source = state.encoding, state.decoder, "checkpoint"
    else:
        state, _ = _run_init(ds, cfg, log=not args.quiet)
        enc, dec, init_source = state.encoding, state.decoder, "inline"
    tcfg = _train_config(cfg, args)
    train, val = _views(ds, ds.train), _views(ds, ds.val)
    bbox = ds.config.bbox

    def log(it, parts):
        if not args.quiet and (it % 100 == 0 or it + 1 == tcfg.iterations):
            print(f"train {it:6d}  " + "  ".join(f"{k} {v:.5f}" for k, v in parts.items()), flush=True)

    res = train_field(train, bbox, enc, dec, tcfg, val=val or None, callback=log)
    metrics = {"val_psnr_series": res.val_psnr, "final_loss": res.losses[-1]}
    if val:
        ev = evaluate(res.field, enc, dec, val, bbox, tcfg)
        metrics |= {"val_psnr": ev["psnr"], "floor_mae": ev["floor_mae"]}
        for i, buf in zip(ds.val, render_views(res.field, enc, dec, val, bbox, tcfg)):
            _write_buffers(out / "val_render", i, buf, ds.cameras[i])
    ablation = {"init": init_source, "optimize_gaussians": tcfg.optimize_gaussians,
                "lambda_mono": tcfg.lambda_mono, "early_stop": tcfg.early_stop,
                "diffuse_only": tcfg.diffuse_only}
    save_model(out / "model.fld", res.field, enc, dec, bbox, {"train": tcfg.to_dict(), "ablation": ablation})
    with open(out / "loss.csv", "w", newline="") as fh:
        keys = sorted(res.losses[0])
        w = csv.writer(fh)
        w.writerow(["iteration"] + keys)
        w.writerows([i + 1] + [repr(row.get(k, 0.0)) for k in keys] for i, row in enumerate(res.losses))
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    write_manifest(out / "manifest.json", "train", cfg, args,
                   {"dataset": str(args.dataset), "init_checkpoint": args.init, "ablation": ablation,
                    "torch_threads": torch.get_num_threads()})
    print(json.dumps({k: v for k, v in metrics.items() if k != "val_psnr_series"}))
    return 0


def cmd_render(args, cfg) -> int:
    from .field import TrainConfig, load_model, render_views

    try:
        f, enc, dec, header = load_model(args.checkpoint)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    ds = _load_dataset(args.dataset)
    idx = {"all": list(range(len(ds.cameras))), "train": ds.train, "val": ds.val}[args.split]
    tcfg = TrainConfig(**header["train"]) if "train" in header else TrainConfig()
    out = _mkdir(args.out)
    views = _views(ds, idx)
    for i, buf in zip(idx, render_views(f, enc, dec, views, header["bbox"], tcfg,
                                        roughness_offset=args.roughness_offset)):
        _write_buffers(out, i, buf, ds.cameras[i])
    write_manifest(out / "manifest.json", "render", cfg, args,
                   {"checkpoint": str(args.checkpoint), "roughness_offset": args.roughness_offset,
                    "split": args.split})
    print(f"rendered {len(idx)} views to {out}")
    return 0


def cmd_eval(args, cfg) -> int:
    from .image import ImageBuffer, mae_degrees, psnr, read_mask_pfm, read_normal_pfm, read_pfm, ssim

    rdir, gdir = Path(args.render_dir), Path(args.gt_dir)
    for d in (rdir, gdir):
        if not (d / "images").is_dir():
            raise UsageError(f"no images/ directory in {d}")
    names = sorted(p.name for p in (rdir / "images").glob("*.pfm"))
    gt_names = sorted(p.name for p in (gdir / "images").glob("*.pfm"))
    if args.split:
        meta = json.loads((gdir / "cameras.json").read_text())
        keep = {f"{i:04d}.pfm" for i in meta.get("split", {}).get(args.split, [])}
        gt_names = [n for n in gt_names if n in keep]
    if len(names) != len(gt_names) or names != gt_names:
        raise UsageError(f"mismatched image sets: {len(names)} rendered vs {len(gt_names)} ground truth")
    if not names:
        raise UsageError("no images to evaluate")
    rows = []
    for n in names:
        mask_path = gdir / "masks" / n
        valid = read_mask_pfm(mask_path) if mask_path.exists() else None
        a, b = ImageBuffer(read_pfm(rdir / "images" / n), valid), ImageBuffer(read_pfm(gdir / "images" / n), valid)
        row = {"image": n, "psnr": psnr(a, b), "ssim": ssim(a, b)}
        if (rdir / "normals" / n).exists() and (gdir / "normals" / n).exists():
            row["mae"] = mae_degrees(ImageBuffer(read_normal_pfm(rdir / "normals" / n), valid),
                                     ImageBuffer(read_normal_pfm(gdir / "normals" / n), valid))
        rows.append(row)
    summary = {k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "ssim", "mae") if all(k in r for r in rows)}
    result = {"mean": summary, "per_image": rows}
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
        write_manifest(f"{args.out}.manifest.json", "eval", cfg, args,
                       {"render_dir": str(rdir), "gt_dir": str(gdir)})
    print(json.dumps(summary))
    return 0


def cmd_toy(args, cfg) -> int:
    from .image import write_png
    from .toyscene import default_probe_lights
    from .toyscene.probe import (
        ProbeConfig,
        ProbeTrack,
        fit_coefficients,
        probe_targets,
        render_stereographic,
        write_reports,
    )

    p = cfg["probe"]
    report = args.report or not (args.fit or args.render)
    render = args.render or not (args.fit or args.report)
    out = _mkdir(args.out)
    pcfg = ProbeConfig(n_gaussians=25, rho=float(p["rho"]), n_mc=int(p["n_mc"]), iterations=int(p["iterations"]),
                       lr=float(p["lr"]), ridge=float(p["ridge"]), seed=substream(cfg["seed"], "init"))
    track = ProbeTrack.line(int(p["positions"]), float(p["spread"]), int(p["n_dirs"]))
    mc_seed = substream(cfg["seed"], "mc-oracle")
    summary = []
    for layout in p["layouts"]:
        lights = default_probe_lights(np.random.default_rng(int(layout)))
        targets = probe_targets(lights, track, pcfg.rho, pcfg.n_mc, mc_seed)
        reps = {e: fit_coefficients(e, track, targets, pcfg, lights) for e in ("sh", "gde")}
        row = {"layout": int(layout), "sh_mse": reps["sh"].total_mse, "gde_mse": reps["gde"].total_mse,
               "sh_variation": reps["sh"].variation, "gde_variation": reps["gde"].variation}
        summary.append(row)
        print(json.dumps(row), flush=True)
        lay_dir = out / f"layout_{int(layout)}"
        if report:
            write_reports(reps, lay_dir, {"layout": int(layout)})
        if render:
            lay_dir.mkdir(parents=True, exist_ok=True)
            res = int(p["resolution"])
            for i, x in enumerate(track.positions):
                for enc, rep in reps.items():
                    img = render_stereographic(enc, rep.coeffs[i], x, pcfg.rho, res, rep.gaussians)
                    write_png(lay_dir / f"{enc}_pos{i + 1}.png", np.clip(img.data, 0, 1))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    write_manifest(out / "manifest.json", "toy", cfg, args)
    return 0


def cmd_check_gradients(args, cfg) -> int:
    from . import gde
    from .gradcheck import check_encoding_gradients, check_end_to_end

    enc = check_encoding_gradients(args.configs, seed=cfg["seed"], grad_fn=gde.encode_grad)
    e2e = check_end_to_end(args.params, seed=cfg["seed"])
    lines = ["encoding gradients (per parameter group):", *enc.lines(),
             "end-to-end training loss:", *e2e.lines()]
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
        write_manifest(f"{args.out}.manifest.json", "check-gradients", cfg, args)
    return 0 if enc.passed and e2e.passed else 1


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override it")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry, e.g. train.batch=256 (repeatable)")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--threads", type=int, default=1, help="torch threads (default 1)")
    common.add_argument("--quiet", action="store_true")

    ap = argparse.ArgumentParser(prog="gdekit", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="render the synthetic glossy room")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("fit-lightfield", parents=[common], help="initialization stage")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--iterations", type=int, help="total iterations")
    p.set_defaults(func=cmd_fit_lightfield, iterations_key="lightfield.iterations")

    p = sub.add_parser("train", parents=[common], help="joint field training")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--init", help="initialization checkpoint from fit-lightfield")
    p.add_argument("--iterations", type=int)
    for flag, text in (("--no-init", "start from untrained Gaussians and decoder"),
                       ("--no-gauss-opt", "freeze the Gaussians"),
                       ("--no-mono", "drop the monocular normal loss"),
                       ("--no-early-stop", "keep the monocular normal loss for the whole run"),
                       ("--diffuse-only", "force the tint to zero")):
        p.add_argument(flag, action="store_true", help=text)
    p.set_defaults(func=cmd_train, iterations_key="train.iterations")

    p = sub.add_parser("render", parents=[common], help="render every buffer of a trained model")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True, help="dataset directory providing cameras")
    p.add_argument("--out", required=True)
    p.add_argument("--roughness-offset", type=float, default=0.0)
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="PSNR, SSIM and normal MAE of renders")
    p.add_argument("render_dir")
    p.add_argument("gt_dir")
    p.add_argument("--split", choices=("train", "val"), help="restrict ground truth to a split")
    p.add_argument("--out", help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("toy", parents=[common], help="hemisphere probe experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--fit", action="store_true", help="fit and print the summary only")
    p.add_argument("--report", action="store_true", help="write coefficient CSV and summary JSON")
    p.add_argument("--render", action="store_true", help="write stereographic PNGs")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("check-gradients", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--configs", type=int, default=500)
    p.add_argument("--params", type=int, default=20)
    p.add_argument("--out", help="write the report here")
    p.set_defaults(func=cmd_check_gradients)
    return ap


def set_threads(n: int) -> None:
    """Torch intra-op threads; the numba kernels are single-threaded."""
    import torch

    if n < 1:
        raise UsageError("--threads must be >= 1")
    torch.set_num_threads(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        set_threads(args.threads)
        cfg = load_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"gdekit: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, exit 1
        print(f"gdekit: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
