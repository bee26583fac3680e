import csv
import json
import subprocess
import sys
import time

import pytest

from unified_latents import config as cfgio
from unified_latents.cli import latest_checkpoint, main

from conftest import small_run_config

ROOT = __import__("pathlib").Path(__file__).parent.parent


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(cfgio.dumps(small_run_config()))
    return p


def _final_line(out):
    return [l for l in out.splitlines() if l.startswith("final loss:")][-1]


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.cfg"
    assert main(["train-ae", "--config", str(missing), "--run-dir", str(tmp_path / "r")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_bad_config_line_numbered(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("seed = 0\ntrain.steps = lots\n")
    assert main(["train-ae", "--config", str(p), "--run-dir", str(tmp_path / "r")]) == 2
    assert f"{p}:2:" in capsys.readouterr().err


def test_bad_override_rejected(cfg_file, tmp_path, capsys):
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(tmp_path / "r"), "--set", "nokey"]) == 2
    assert "KEY=VALUE" in capsys.readouterr().err


def test_train_ae_deterministic_and_guarded(cfg_file, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(a)]) == 0
    out_a = capsys.readouterr().out
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(b)]) == 0
    out_b = capsys.readouterr().out
    assert _final_line(out_a) == _final_line(out_b)
    assert "bitrate: bits_per_pixel=" in out_a
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(a)]) == 2
    assert "not empty" in capsys.readouterr().err
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(a), "--overwrite"]) == 0


def test_flags_reach_config(cfg_file, tmp_path):
    rd = tmp_path / "r"
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(rd), "--seed", "5", "--steps", "3",
                 "--learned-variance", "--set", "weighting.loss_factor=1.9"]) == 0
    cfg = (rd / "config.txt").read_text()
    for line in ("seed = 5", "train.steps = 3", "train.learned_variance = true", "weighting.loss_factor = 1.9"):
        assert line in cfg
    assert latest_checkpoint(rd).name == "ae_step000003.npz"


def test_full_pipeline(cfg_file, tmp_path, capsys):
    ae, base = tmp_path / "ae", tmp_path / "base"
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(ae)]) == 0
    assert main(["train-base", "--config", str(cfg_file), "--run-dir", str(base), "--ae-run", str(ae)]) == 0
    assert latest_checkpoint(base).name.startswith("base_")
    capsys.readouterr()

    assert main(["sample", "--run-dir", str(base), "--n", "3"]) == 0
    manifest = json.loads((base / "samples" / "manifest.json").read_text())
    assert manifest["model"] == "base" and len(manifest["files"]) == 3
    assert main(["sample", "--run-dir", str(base), "--n", "3"]) == 2
    assert main(["sample", "--run-dir", str(base), "--n", "2", "--overwrite"]) == 0
    assert len(list((base / "samples").glob("*.png"))) == 2

    assert main(["reconstruct", "--run-dir", str(ae), "--n", "2"]) == 0
    assert "psnr=" in capsys.readouterr().out

    assert main(["eval", "--run-dir", str(base), "--model", "base"]) == 0
    with open(base / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["metric"] for r in rows} >= {"psnr", "rfid", "bits_per_pixel"}
    assert all(r["checkpoint_id"].startswith("base_") for r in rows)
    assert main(["eval", "--run-dir", str(base)]) == 2
    assert "exists" in capsys.readouterr().err
    assert main(["eval", "--run-dir", str(ae), "--model", "base"]) == 2


def test_train_base_errors(cfg_file, tmp_path, capsys):
    assert main(["train-base", "--config", str(cfg_file), "--run-dir", str(tmp_path / "b"),
                 "--ae-run", str(tmp_path / "missing")]) == 2
    assert "missing" in capsys.readouterr().err
    ae = tmp_path / "ae"
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(ae)]) == 0
    capsys.readouterr()
    assert main(["train-base", "--config", str(cfg_file), "--run-dir", str(tmp_path / "b"), "--ae-run", str(ae),
                 "--set", "latent.lambda_z0=7"]) == 2
    assert "lambda" in capsys.readouterr().err
    assert not (tmp_path / "b").exists()


def test_single_stage_cli(cfg_file, tmp_path):
    rd = tmp_path / "s"
    assert main(["train-ae", "--config", str(cfg_file), "--run-dir", str(rd), "--single-stage"]) == 0
    assert latest_checkpoint(rd).name.startswith("single_")
    assert main(["sample", "--run-dir", str(rd), "--n", "2"]) == 0


def test_sweep_cli(cfg_file, tmp_path, capsys):
    rd = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_file), "--run-dir", str(rd), "--steps", "2",
                 "--values", "1.5,1.3"]) == 0
    with open(rd / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["weighting.loss_factor"]) for r in rows] == [1.3, 1.5]
    assert main(["sweep", "--config", str(cfg_file), "--run-dir", str(rd), "--values", "1.5"]) == 2


def test_flops_cli(tmp_path, capsys):
    assert main(["flops", "--config", str(ROOT / "configs" / "smoke.cfg")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "network,inference_flops,training_flops"
    for line in lines[1:]:
        _, inf, tr = line.split(",")
        assert int(tr) == 3 * int(inf) and int(inf) > 0


def test_export_data_cli(cfg_file, tmp_path):
    out = tmp_path / "png"
    assert main(["export-data", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert len(list(out.glob("*.png"))) == 256


def test_smoke_config_runtime(tmp_path):
    # [DERIVED] smoke-runtime oracle: bundled 200-step config finishes well under 5 minutes
    t0 = time.time()
    proc = subprocess.run([sys.executable, "-m", "unified_latents.cli", "train-ae", "--config",
                           str(ROOT / "configs" / "smoke.cfg"), "--run-dir", str(tmp_path / "smoke")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert time.time() - t0 < 300
    assert "final loss:" in proc.stdout
