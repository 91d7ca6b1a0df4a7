import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ctxpaint import io as imgio
from ctxpaint.cli import dispatch
from ctxpaint.masks import load_mask
from ctxpaint.metrics import full_metrics
from ctxpaint.schedule import cosine_schedule, dump_csv, laplace_schedule

SMALL_MODEL = dict(image_size=16, patch_size=4, channels=3, embed_dim=8, enc_depth=1, dec_depth=1,
                   enc_heads=2, dec_heads=2, mlp_ratio=2, time_embed_dim=8)


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    assert "inpaint" in capsys.readouterr().out
    assert dispatch(["inpaint", "--help"]) == 0


def test_unknown_flag_is_usage_error(capsys):
    assert dispatch(["mask-gen", "--out", "m.png", "--bogus-flag", "3"]) == 1
    assert "--bogus-flag" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_command(capsys):
    assert dispatch(["paint-everything"]) == 1
    assert dispatch([]) == 1


def test_bad_values_are_usage_errors(tmp_path, capsys):
    assert dispatch(["mask-gen", "--ratio", "1.5", "--out", str(tmp_path / "m.png")]) == 1
    assert dispatch(["inpaint", "--image", "nope.png", "--context", "nope.png", "--mask", "nope.png",
                     "--checkpoint", str(tmp_path), "--out", str(tmp_path / "o.png")]) == 1
    assert "--image" in capsys.readouterr().err


def test_runtime_failure_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png at all")
    ckpt = tmp_path / "ck"
    ckpt.mkdir()
    assert dispatch(["inpaint", "--image", str(bad), "--context", str(bad), "--mask", str(bad),
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "o.png")]) == 2
    assert "error" in capsys.readouterr().err


def test_mask_gen_is_deterministic(tmp_path, capsys):
    paths = [tmp_path / f"m{k}.png" for k in range(3)]
    for path, seed in zip(paths, [7, 7, 8]):
        assert dispatch(["mask-gen", "--seed", str(seed), "--ratio", "0.3", "--out", str(path)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes() != paths[2].read_bytes()
    report = json.loads(capsys.readouterr().out.splitlines()[0])
    assert abs(report["achieved_ratio"] - 0.3) <= 0.05


def test_schedule_dump(tmp_path):
    out = tmp_path / "s.csv"
    assert dispatch(["schedule-dump", "--schedule", "laplace", "--T", "50", "--out", str(out)]) == 0
    assert out.read_text() == dump_csv(laplace_schedule(50))
    assert dispatch(["schedule-dump", "--T", "20", "--out", str(out)]) == 0
    assert out.read_text() == dump_csv(cosine_schedule(20))


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ctxpaint", "schedule-dump", "--T", "5",
                           "--out", str(tmp_path / "s.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ctxpaint", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1


def test_smoke_pipeline(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    assert dispatch(["gen-data", "--n", "12", "--seed", "3", "--size", "16", "--workers", "2",
                     "--out", str(data)]) == 0
    assert json.loads(capsys.readouterr().out)["pairs"] == 12

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(data), "epochs": 2, "batch_size": 4, "T": 20,
                               "checkpoint_stride": 1, "model": SMALL_MODEL}))
    assert dispatch(["train", "--config", str(cfg), "--out", str(run)]) == 0
    assert json.loads(capsys.readouterr().out)["steps"] == 6
    assert {"epoch_0001", "epoch_0002", "final", "loss_log.csv"} <= set(os.listdir(run))

    mask = tmp_path / "mask.png"
    assert dispatch(["mask-gen", "--size", "16", "--rects", "3", "--ratio", "0.3", "--patch-size", "4",
                     "--seed", "1", "--out", str(mask)]) == 0
    capsys.readouterr()

    pred, gt, masks = tmp_path / "pred", tmp_path / "gt", tmp_path / "masks"
    for d in (pred, gt, masks):
        d.mkdir()
    image = data / "pairs" / "00000_a.png"
    context = data / "pairs" / "00000_b.png"
    chain = tmp_path / "chain"
    assert dispatch(["inpaint", "--image", str(image), "--context", str(context), "--mask", str(mask),
                     "--checkpoint", str(run / "final"), "--steps", "20", "--jumps", "2",
                     "--jump-length", "5", "--dump-chain", str(chain), "--chain-stride", "10",
                     "--out", str(pred / "scene.icdf")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["model_evals"] == report["denoise_transitions"] == 35
    assert report["renoise_steps"] == 15
    frames = sorted(os.listdir(chain))
    assert frames[0].endswith("_t0020.png") and frames[-1].endswith("_t0000.png")

    out = imgio.load_icdf(pred / "scene.icdf")
    truth = imgio.load_image(image)
    keep = ~load_mask(mask).pixel_mask.astype(bool)
    np.testing.assert_allclose(out[:, keep], truth[:, keep], atol=1e-6)

    imgio.save_image(gt / "scene.png", truth)
    imgio.save_image(pred / "scene.png", np.zeros_like(truth))  # the .icdf must win
    (masks / "scene.png").write_bytes(mask.read_bytes())
    table = tmp_path / "eval.csv"
    assert dispatch(["eval", "--pred", str(pred), "--gt", str(gt), "--masks", str(masks),
                     "--out", str(table)]) == 0
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["image"] for r in rows] == ["scene", "mean"]
    want = full_metrics(out, imgio.load_image(gt / "scene.png"))
    assert float(rows[0]["psnr"]) == pytest.approx(want.psnr, abs=1e-5)
    assert int(rows[0]["masked_pixels"]) == int((~keep).sum())
    assert rows[0]["psnr"] == rows[1]["psnr"]
