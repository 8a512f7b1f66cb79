import csv
import json

import numpy as np
import pytest

from gdekit import blob, gde
from gdekit.cli import config_hash, main, substream
from gdekit.gradcheck import local_dot
from gdekit.image import ImageBuffer, mae_degrees, psnr, read_normal_pfm, read_pfm

TINY = {
    "n_gaussians": 16,
    "room": {"n_mc": 16},
    "dataset": {"views": 4, "width": 16, "height": 12, "val_every": 2},
    "lightfield": {"iterations": 6, "batch": 256},
    "train": {"iterations": 6, "batch": 64, "n_samples": 8, "n_importance": 4, "val_every": 3,
              "mono_stop_iter": 2, "field": {"resolutions": [8], "normal_resolutions": [4], "hidden": 16}},
    "probe": {"layouts": [0], "positions": 2, "n_dirs": 64, "n_mc": 10000, "iterations": 3, "resolution": 8},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen-synthetic", "--config", str(cfg), "--out", str(root / "ds")]) == 0
    assert main(["fit-lightfield", str(root / "ds"), "--config", str(cfg), "--out", str(root / "init.lfs"),
                 "--quiet"]) == 0
    return root, cfg


def _run(work, *args):
    root, cfg = work
    return main([*args, "--config", str(cfg), "--quiet"])


def test_gen_synthetic_byte_identical_and_manifest(work, tmp_path):
    root, _ = work
    out = tmp_path / "nested" / "ds2"  # missing parents are created
    assert _run(work, "gen-synthetic", "--out", str(out)) == 0
    for sub in ("images", "normals", "depth", "masks"):
        for f in sorted((root / "ds" / sub).iterdir()):
            assert f.read_bytes() == (out / sub / f.name).read_bytes()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(man["config"])
    assert man["substreams"]["dataset"] == substream(man["seed"], "dataset")
    assert man["config"]["dataset"]["views"] == 4


def test_unwritable_out_is_user_error(work, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _run(work, "gen-synthetic", "--out", str(blocker / "sub")) == 2


def test_bad_config_is_user_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gen-synthetic", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["gen-synthetic", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["gen-synthetic", "--set", "train.lambda_mono=-1", "--out", str(tmp_path / "o")]) == 2


def test_flags_override_config(work, tmp_path):
    out = tmp_path / "ds"
    assert _run(work, "gen-synthetic", "--out", str(out), "--seed", "5", "--set", "dataset.views=2") == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 5 and man["config"]["dataset"]["views"] == 2
    assert len(list((out / "images").iterdir())) == 2


def test_loss_csv_length(work):
    root, _ = work
    with open(f"{root / 'init.lfs'}.loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert 0 < len(rows) <= TINY["lightfield"]["iterations"]


def test_resume_reproduces_next_losses(work, tmp_path):
    root, _ = work
    ds = str(root / "ds")
    assert _run(work, "fit-lightfield", ds, "--out", str(tmp_path / "a.lfs"), "--iterations", "3") == 0
    assert _run(work, "fit-lightfield", ds, "--out", str(tmp_path / "b.lfs"), "--resume",
                str(tmp_path / "a.lfs")) == 0

    def losses(p):
        with open(f"{p}.loss.csv") as fh:
            return [float(r["loss"]) for r in csv.DictReader(fh)]

    assert losses(tmp_path / "b.lfs") == losses(root / "init.lfs")


def test_empty_dataset_exit_2(work, tmp_path):
    (tmp_path / "empty").mkdir()
    (tmp_path / "empty" / "cameras.json").write_text(json.dumps({"cameras": [], "split": {"train": [], "val": []}}))
    assert _run(work, "fit-lightfield", str(tmp_path / "empty"), "--out", str(tmp_path / "x.lfs")) == 2
    assert _run(work, "fit-lightfield", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x.lfs")) == 2


@pytest.fixture(scope="module")
def runs(work):
    root, _ = work
    out = {}
    for name, flags in {"full": [], "noopt": ["--no-gauss-opt"], "nomono": ["--no-mono"],
                        "noes": ["--no-early-stop"], "noinit": ["--no-init"], "diffuse": ["--diffuse-only"]}.items():
        init = [] if name == "noinit" else ["--init", str(root / "init.lfs")]
        assert _run(work, "train", str(root / "ds"), "--out", str(root / name), *init, *flags) == 0
        out[name] = root / name
    return out


def test_ablation_flags_in_manifest(runs):
    want = {
        "full": {"init": "checkpoint", "optimize_gaussians": True, "lambda_mono": 1.0, "early_stop": True,
                 "diffuse_only": False},
        "noopt": {"optimize_gaussians": False},
        "nomono": {"lambda_mono": 0.0},
        "noes": {"early_stop": False},
        "noinit": {"init": "none"},
        "diffuse": {"diffuse_only": True},
    }
    base = want["full"]
    for name, diff in want.items():
        man = json.loads((runs[name] / "manifest.json").read_text())
        assert man["ablation"] == base | diff, name


def test_frozen_gaussians_bit_equal_to_init(work, runs):
    root, _ = work
    init, _ = blob.unpack(b"LFS1", (root / "init.lfs").read_bytes())
    for name, equal in (("noopt", True), ("full", False)):
        model, _ = blob.unpack(b"FLD1", (runs[name] / "model.fld").read_bytes())
        same = all(np.array_equal(init[k], model[k]) for k in ("gauss/mu", "gauss/log_inv_scale", "gauss/rot"))
        assert same == equal, name


def test_train_emits_val_psnr_series(runs):
    m = json.loads((runs["full"] / "metrics.json").read_text())
    assert [it for it, _ in m["val_psnr_series"]] == [3, 6]
    assert np.isfinite(m["val_psnr"]) and m["floor_mae"] >= 0


def test_render_offset_zero_matches_validation_render(work, runs, tmp_path):
    root, _ = work
    assert _run(work, "render", str(runs["full"] / "model.fld"), "--dataset", str(root / "ds"),
                "--out", str(tmp_path / "r"), "--split", "val") == 0
    names = sorted(p.name for p in (runs["full"] / "val_render" / "images").iterdir())
    assert names
    for sub in ("images", "normals", "specular", "diffuse"):
        for n in names:
            assert (tmp_path / "r" / sub / n).read_bytes() == (runs["full"] / "val_render" / sub / n).read_bytes()


def test_render_missing_checkpoint(work, tmp_path):
    root, _ = work
    assert _run(work, "render", str(tmp_path / "none.fld"), "--dataset", str(root / "ds"),
                "--out", str(tmp_path / "r")) == 2


def test_eval_identical_and_mismatched(work, runs, tmp_path):
    root, _ = work
    out = tmp_path / "m.json"
    assert _run(work, "eval", str(root / "ds"), str(root / "ds"), "--out", str(out)) == 0
    mean = json.loads(out.read_text())["mean"]
    assert mean["psnr"] == 99.0 and mean["mae"] == 0.0
    assert _run(work, "eval", str(runs["full"] / "val_render"), str(root / "ds")) == 2


def test_eval_matches_direct_metrics(work, runs, tmp_path):
    root, _ = work
    out = tmp_path / "m.json"
    rdir = runs["full"] / "val_render"
    assert _run(work, "eval", str(rdir), str(root / "ds"), "--split", "val", "--out", str(out)) == 0
    res = json.loads(out.read_text())
    for row in res["per_image"]:
        n = row["image"]
        a, b = read_pfm(rdir / "images" / n), read_pfm(root / "ds" / "images" / n)
        assert row["psnr"] == pytest.approx(psnr(ImageBuffer(a), ImageBuffer(b)), abs=1e-12)
        na, nb = read_normal_pfm(rdir / "normals" / n), read_normal_pfm(root / "ds" / "normals" / n)
        assert row["mae"] == pytest.approx(mae_degrees(ImageBuffer(na), ImageBuffer(nb)), abs=1e-9)


def test_toy_report_and_determinism(work, tmp_path):
    for d in ("a", "b"):
        assert _run(work, "toy", "--out", str(tmp_path / d)) == 0
    summary = json.loads((tmp_path / "a" / "layout_0" / "summary.json").read_text())
    assert {"sh_mse", "gde_mse"} <= set(summary)
    for f in ("layout_0/coefficients.csv", "layout_0/summary.json", "layout_0/gde_pos1.png", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_check_gradients_passes(tmp_path, capsys):
    assert main(["check-gradients", "--configs", "40", "--params", "5", "--out", str(tmp_path / "g.txt")]) == 0
    text = (tmp_path / "g.txt").read_text()
    for group in ("mu", "log_inv_scale", "rot", "origin", "direction", "rho"):
        assert group in text
    assert "max rel err" in text


def test_check_gradients_catches_sign_flip(monkeypatch):
    real = gde.encode_grad

    def flipped(gs, ray, rho, upstream):
        vals, g = real(gs, ray, rho, upstream)
        if local_dot(gs, ray, rho) < 0:  # approaching branch only
            g.direction = -g.direction
        return vals, g

    monkeypatch.setattr(gde, "encode_grad", flipped)
    assert main(["check-gradients", "--configs", "40", "--params", "3"]) == 1
