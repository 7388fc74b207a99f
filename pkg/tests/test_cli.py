import filecmp
import subprocess
import sys

import pytest

from trophic.cli import main
from trophic.harness.metrics import read_metrics

SMALL = ["--set", "network.B=4", "--set", "network.ell=8"]


def tree(d):
    return sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file())


def test_run_twice_is_byte_identical(tmp_path, capsys):
    args = ["run", "--seed", "1", "--set", "run.steps=300"] + SMALL
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    files = tree(a)
    assert files == tree(b)
    assert {str(f) for f in files} >= {"config.resolved.ini", "metrics.jsonl", "curves/predict_s1_mse.csv",
                                       "figures/predict_s1_mse.png"}
    for f in files:
        assert filecmp.cmp(a / f, b / f, shallow=False), f


def test_run_default_output_dir(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[experiment]\nkind = capacity\noutput = {tmp_path / 'runs'}\nplots = false\n")
    assert main(["run", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith(str(tmp_path / "runs" / "capacity-"))
    assert read_metrics(f"{out}/metrics.jsonl")[0].value == pytest.approx(3.3728e8, rel=1e-3)


def test_validate_config(tmp_path, capsys):
    good = tmp_path / "good.ini"
    good.write_text("[experiment]\nkind = memory\n[network]\nB = 4\n")
    assert main(["validate-config", str(good)]) == 0
    assert "config hash" in capsys.readouterr().out
    bad = tmp_path / "bad.ini"
    bad.write_text("[network]\nwidth = 4\n")
    assert main(["validate-config", str(bad)]) == 1
    assert "network.width" in capsys.readouterr().err


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--set", "rates.eta_h=oops"]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "trophic: config-error:" in err


def test_replay_reproduces_tail(tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["run", "--seed", "2", "--out", str(run_dir), "--set", "run.steps=400",
                 "--set", "run.checkpoint_every=200", "--set", "experiment.plots=false"] + SMALL) == 0
    ck = run_dir / "checkpoints" / "s2_t200.bin"
    assert main(["replay", "--checkpoint", str(ck), "--config", str(run_dir / "config.resolved.ini")]) == 0
    rep = run_dir / "replay"
    tail = [r.to_json() for r in read_metrics(run_dir / "metrics.jsonl") if r.step > 200]
    assert tail == [r.to_json() for r in read_metrics(rep / "metrics.jsonl")]
    assert filecmp.cmp(run_dir / "curves" / "predict_s2_mse.csv", rep / "curves" / "predict_s2_mse.csv",
                       shallow=False)


def test_replay_rejects_non_resumable_kind(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nkind = capacity\n")
    assert main(["replay", "--checkpoint", str(tmp_path / "x.bin"), "--config", str(cfg)]) == 1


def test_replay_corrupt_checkpoint(tmp_path, capsys):
    ck = tmp_path / "bad.bin"
    ck.write_bytes(b"TBSR\x01")
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nkind = predict\n")
    assert main(["replay", "--checkpoint", str(ck), "--config", str(cfg)]) == 1
    assert "trophic: error:" in capsys.readouterr().err


def test_plot_formats(tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["run", "--out", str(run_dir), "--set", "run.steps=200", "--set", "experiment.plots=false"]
                + SMALL) == 0
    assert main(["plot", str(run_dir), "--format", "pdf"]) == 0
    assert (run_dir / "figures" / "predict_s0_mse.pdf").read_bytes()[:4] == b"%PDF"
    assert main(["plot", str(tmp_path), "--format", "svg"]) == 0
    assert "no curves" in capsys.readouterr().err


def test_suite_exit_codes(tmp_path, capsys):
    assert main(["suite", "--only", "2"]) == 0
    assert main(["suite", "--only", "10"]) == 2
    out = capsys.readouterr().out
    assert "[PASS]  2 oracle" in out and "[FAIL] 10 capacity" in out
    assert main(["suite", "--only", "99"]) == 1
    cfg = tmp_path / "s.ini"
    cfg.write_text("[suite]\nonly = 2\nfast = yes\n")
    assert main(["suite", "--config", str(cfg)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "trophic", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("run", "validate-config", "replay", "suite", "plot"):
        assert verb in res.stdout
