import json

import numpy as np
import pytest

from trophic.blocksparse import BlockLayout, random_block_sparse
from trophic.dynamics import NetworkState
from trophic.harness import ConfigError, default_config, load_config
from trophic.harness.checkpoint import (CheckpointError, checkpoint_extra, load_checkpoint, save_checkpoint)
from trophic.harness.config import KINDS, parse_overrides
from trophic.harness.experiments import (Output, alignment_curve, compositional_capacity, continual_seed,
                                         retention_score, run_damage_recovery, run_experiment, run_predict)
from trophic.harness.metrics import MetricError, MetricSink, read_curve, read_metrics, write_curve
from trophic.harness.plotting import plot_curve, plot_directory

SMALL = ["network.B=4", "network.ell=8"]


# -- config ----------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_defaults_validate_and_roundtrip(kind):
    cfg = default_config(kind).validate()
    again = load_config(text=cfg.to_ini())
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="network.bogus"):
        load_config(overrides=["network.bogus=1"])
    with pytest.raises(ConfigError, match=r"\[nonsense\]"):
        load_config(text="[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError, match="run.steps"):
        load_config(text="[experiment]\nkind = capacity\n[run]\nsteps = 3\n")
    with pytest.raises(ConfigError, match="seed"):
        load_config(overrides=["network.seed=3"])     # per-seed fields are derived


def test_bad_values_are_rejected():
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(overrides=["network.B=eight"])
    with pytest.raises(ConfigError):
        load_config(overrides=["rates.eta_fb=0.5"])    # breaks the rate ordering
    with pytest.raises(ConfigError):
        load_config(overrides=["experiment.kind=dance"])
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.ini")


def test_hash_ignores_output_but_not_values():
    cfg = default_config("predict")
    assert cfg.with_output("/elsewhere").hash() == cfg.hash()
    assert load_config(overrides=["dynamics.tau_fast=12.0"]).hash() != cfg.hash()


def test_overrides_beat_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nkind = predict\nseeds = 4, 5\n[network]\nB = 6\n")
    cfg = load_config(p, ["network.B=5"])
    assert cfg.network.B == 5 and cfg.seeds == (4, 5)


def test_resolved_config_written(tmp_path):
    cfg = default_config("capacity")
    path = cfg.write(tmp_path)
    assert load_config(path) == cfg


# -- metrics -------------------------------------------------------------------------------------

def test_metric_sink_records(tmp_path):
    p = tmp_path / "m.jsonl"
    with MetricSink(p, "abc") as sink:
        sink.log("e", 1, "mse", 0.5)
        sink.log("e", 1, "nan", float("nan"))
        sink.log("e", 3, "vec", np.array([1.0, 2.0]).tolist())
        with pytest.raises(MetricError):
            sink.log("e", 2, "mse", 0.1)
    recs = read_metrics(p)
    assert [r.metric for r in recs] == ["mse", "nan", "vec"]
    assert recs[1].value is None
    assert json.loads(p.read_text().splitlines()[0]) == {"config_hash": "abc", "experiment": "e", "metric": "mse",
                                                         "step": 1, "value": 0.5}


def test_metric_append_requires_same_hash(tmp_path):
    p = tmp_path / "m.jsonl"
    with MetricSink(p, "abc") as sink:
        sink.log("e", 5, "x", 1)
    with pytest.raises(MetricError):
        MetricSink(p, "def", append=True)
    with MetricSink(p, "abc", append=True) as sink:
        with pytest.raises(MetricError):
            sink.log("e", 4, "x", 1)
        sink.log("e", 6, "x", 2)
    assert len(read_metrics(p)) == 2


def test_malformed_metrics(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("{not json}\n")
    with pytest.raises(MetricError):
        read_metrics(p)


def test_curve_roundtrip(tmp_path):
    p = write_curve(tmp_path / "c.csv", ["step", "v"], [(1, 0.1), (2, float("nan"))])
    header, rows = read_curve(p)
    assert header == ["step", "v"]
    assert rows[0] == [1.0, 0.1] and np.isnan(rows[1][1])


# -- checkpoints -------------------------------------------------------------------------------------

def test_checkpoint_roundtrip_and_corruption(tmp_path):
    rng = np.random.default_rng(0)
    W = random_block_sparse(BlockLayout(4, 3, 2), 2, 1.0, rng)
    s = NetworkState.zeros(12, noise_seed=7)
    s.x[:] = rng.uniform(-1, 1, 12)
    s.step = 99
    p = save_checkpoint(tmp_path / "c.bin", W, s, {"R": rng.normal(size=(1, 12)), "extra.t": np.array([5])})
    W2, s2, arr = load_checkpoint(p)
    assert W2 == W and s2.step == 99 and s2.noise_seed == 7
    np.testing.assert_array_equal(s2.x, s.x)
    assert checkpoint_extra(p, "t")[0] == 5
    raw = p.read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:30])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "trail.bin").write_bytes(raw + b"x")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trail.bin")


def test_replay_from_checkpoint_matches_uninterrupted(tmp_path):
    cfg = load_config(overrides=SMALL + ["run.steps=400", "run.checkpoint_every=200", "switches.structural=true",
                                         "structure.structural_period=50"])
    full = Output(tmp_path / "full", cfg)
    a = run_predict(cfg, full)[0]
    full.close()
    ck = full.checkpoint_path("s0_t200.bin")
    part = Output(tmp_path / "part", cfg)
    b = run_experiment(cfg, part, resume=ck)[0]
    part.close()
    assert a.mse == b.mse and a.events == b.events
    later = [r for r in read_metrics(full.dir / "metrics.jsonl") if r.step > 200]
    replayed = [r for r in read_metrics(part.dir / "metrics.jsonl") if r.step > 200]
    assert [r.to_json() for r in later] == [r.to_json() for r in replayed]


def test_replay_rejected_for_other_kinds(tmp_path):
    with pytest.raises(ValueError):
        run_experiment(default_config("capacity"), None, resume=tmp_path / "x.bin")


# -- experiments ---------------------------------------------------------------------------------------

def test_capacity_formula():
    assert compositional_capacity(10, 0, 32) == 1.0
    assert compositional_capacity(4, 2, 10, 0.5) == 6 * 25.0
    with pytest.raises(ValueError):
        compositional_capacity(4, -1, 10)


def test_retention_score():
    assert retention_score(1.0, 1.0) == 1.0
    assert retention_score(1.5, 1.0) == pytest.approx(0.5)


def test_identical_tasks_keep_their_error():
    cfg = load_config(kind="continual", overrides=SMALL + [
        "run.b_kind=sine", "run.b_period=20.0", "run.max_steps=800", "run.b_steps=300", "run.patience=100",
        "run.switches=2", "run.transfer_steps=50"])
    res = continual_seed(cfg, 0)
    # task B is task A, so nothing can be forgotten
    assert res.zero_shot <= 2.0 * res.baseline
    assert res.retention >= 0.5


def test_zero_ablation_gives_flat_curve():
    cfg = load_config(kind="damage", overrides=SMALL + [
        "run.fraction=0.0", "run.pre_steps=600", "run.post_steps=300", "run.window=200", "experiment.seeds=0"])
    dr = run_damage_recovery(cfg)[0]
    assert dr.after <= 1.5 * dr.baseline


def test_damage_spikes_error():
    cfg = load_config(kind="damage", overrides=SMALL + [
        "run.fraction=0.9", "run.pre_steps=600", "run.post_steps=300", "run.window=100", "experiment.seeds=0"])
    dr = run_damage_recovery(cfg)[0]
    assert dr.after > dr.baseline


def test_aligned_feedback_has_unit_cosine():
    cfg = load_config(kind="alignment", overrides=SMALL + [
        "network.fb_init=aligned", "network.readout_init=0.3", "switches.readout=false", "switches.feedback=false",
        "run.steps=300", "run.log_every=50"])
    res = alignment_curve(cfg, 0)
    np.testing.assert_allclose(res.cosine, 1.0, atol=1e-12)


def test_run_writes_outputs(tmp_path):
    cfg = load_config(overrides=SMALL + ["run.steps=200"])
    out = Output(tmp_path, cfg)
    run_experiment(cfg, out)
    out.close()
    assert (tmp_path / "config.resolved.ini").read_text() == cfg.to_ini()
    assert read_metrics(tmp_path / "metrics.jsonl")[0].config_hash == cfg.hash()
    assert (tmp_path / "curves" / "predict_s0_mse.csv").exists()


# -- plotting ------------------------------------------------------------------------------------------------

def test_plot_curve_and_directory(tmp_path):
    write_curve(tmp_path / "curves" / "a.csv", ["step", "mse", "other"], [(1, 1.0, 2.0), (2, 1e-5, 1.0)])
    out = plot_curve(tmp_path / "curves" / "a.csv", tmp_path / "a.png")
    assert out.read_bytes()[:4] == b"\x89PNG"
    figs = plot_directory(tmp_path, "svg")
    assert [f.name for f in figs] == ["a.svg"]
    assert b"<svg" in figs[0].read_bytes()[:500]
