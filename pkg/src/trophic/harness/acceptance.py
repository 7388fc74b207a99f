"""Machine-checked acceptance criteria.

Each check builds its config from the per-kind defaults, runs the
experiment, and returns a :class:`CheckResult`.  A check passes only if the
threshold holds and the run finished inside its time budget.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import oracle
from ..blocksparse import to_dense
from ..network import LearningSwitches, Network, NetworkConfig
from ..dynamics import DynamicsParams
from ..learning import PlasticityRates
from ..structure import StructuralPolicy
from .config import ExperimentConfig, default_config
from .experiments import (Output, compositional_capacity, run_alignment, run_continual_suite, run_criticality,
                          run_damage_recovery, run_exactness, run_experiment, run_memory_capacity,
                          run_nlms_ablation, run_rl, run_temporal)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget: float | None = None
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:.0f}s" if self.budget else ""
        return f"[{status}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s{budget})"


def _output(out_dir, cfg: ExperimentConfig):
    if out_dir is None:
        return None
    return Output(Path(out_dir) / cfg.experiment_id, cfg)


def _finish(number, name, ok, detail, t0, budget, values, out=None) -> CheckResult:
    if out is not None:
        out.close()
    secs = time.perf_counter() - t0
    in_time = budget is None or secs < budget
    if not in_time:
        detail += f"; over time budget"
    return CheckResult(number, name, bool(ok and in_time), detail, secs, budget, values)


def check_1(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("exactness")
    out = _output(out_dir, cfg)
    res = run_exactness(cfg, out)
    p, s = res.pearson, res.spearman
    return _finish(1, "structural exactness", p >= 0.90 and s >= 0.85,
                   f"pearson {p:.3f} (>=0.90), spearman {s:.3f} (>=0.85), {len(cfg.seeds)} seeds",
                   t0, 120, {"pearson": p, "spearman": s}, out)


def oracle_fixture(steps: int = 10, seed: int = 3):
    """2 blocks of 4 neurons, fully occupied, driven by a sine for ``steps`` steps."""
    cfg = NetworkConfig(B=2, ell=4, d_in=1, d_out=1, c_max=2, init_blocks_per_row=2, w_scale=0.5, input_scale=1.0,
                        bias_scale=0.2, seed=seed, noise_seed=seed + 1)
    net = Network(cfg, DynamicsParams(tau_fast=3.0), PlasticityRates(), StructuralPolicy(), LearningSwitches())
    rng = np.random.default_rng(seed)
    net.heads.R = rng.normal(0.0, 0.5, net.heads.R.shape)
    t = np.arange(steps + 1)
    u = np.sin(2 * np.pi * t / 7.0)
    return oracle.record_trajectory(net, u[:-1, None], u[1:, None])


def finite_difference_gradient(traj, h: float = 1e-6) -> np.ndarray:
    """Central differences of the summed loss over every stored off-diagonal synapse."""
    Wd = to_dense(traj.W)
    noise = traj.noise()
    post, pre = oracle.synapse_index(traj.W)
    G = np.zeros_like(Wd)
    for i, j in zip(post, pre):
        Wp, Wm = Wd.copy(), Wd.copy()
        Wp[i, j] += h
        Wm[i, j] -= h
        G[i, j] = (oracle.trajectory_loss(traj, Wp, traj.R, noise) - oracle.trajectory_loss(traj, Wm, traj.R, noise)) / (2 * h)
    return G


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_2(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    tr = oracle_fixture()
    post, pre = oracle.synapse_index(tr.W)
    g_bptt = oracle.bptt_gradient(tr, tr.W)[post, pre]
    g_fd = finite_difference_gradient(tr)[post, pre]
    g_ep = oracle.forward_eprop_exact(tr, tr.W).grad
    e_fd, e_ep = _rel(g_bptt, g_fd), _rel(g_ep, g_bptt)
    return _finish(2, "oracle correctness", e_fd <= 1e-5 and e_ep <= 1e-8,
                   f"bptt vs fd {e_fd:.1e} (<=1e-5), e-prop vs bptt {e_ep:.1e} (<=1e-8)",
                   t0, 60, {"bptt_vs_fd": e_fd, "eprop_vs_bptt": e_ep})


def check_3(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("temporal")
    out = _output(out_dir, cfg)
    res = run_temporal(cfg, out)
    d, e = res.diagonal, res.ema
    ok = d.pearson >= 0.70 and d.auroc >= 0.85 and e.auroc < d.auroc
    return _finish(3, "temporal exactness", ok,
                   f"diagonal pearson {d.pearson:.3f} (>=0.70), auroc {d.auroc:.3f} (>=0.85); "
                   f"ema auroc {e.auroc:.3f} (< diagonal)",
                   t0, 300, {"pearson": d.pearson, "auroc": d.auroc, "ema_auroc": e.auroc}, out)


def check_4(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("alignment")
    out = _output(out_dir, cfg)
    res = run_alignment(cfg, out)
    gain = float(np.median([r.gain for r in res]))
    before = all(r.learns_before_aligning for r in res)
    r0 = res[0]
    ok = cfg.run["steps"] >= 20000 and gain >= 0.3 and before
    return _finish(4, "spatial alignment", ok,
                   f"cosine gain {gain:.3f} (>=0.3); mse<=20% at step {r0.mse_step}, cosine>0.8 at step {r0.cosine_step}",
                   t0, 600, {"gain": gain, "mse_step": r0.mse_step, "cosine_step": r0.cosine_step}, out)


def check_5(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("nlms_ablation")
    out = _output(out_dir, cfg)
    res = run_nlms_ablation(cfg, out)
    red = {k: float(np.median([r.reduction[k] for r in res])) for k in res[0].reduction}
    ok = red["original"] >= 0.5 and red["no_nlms"] <= 0.1 and red["neither"] <= 0.1
    return _finish(5, "NLMS ablation", ok,
                   f"original {red['original']:.0%} (>=50%), no_nlms {red['no_nlms']:.0%} (<=10%), "
                   f"neither {red['neither']:.0%} (<=10%)", t0, 300, red, out)


def check_6(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("continual")
    out = _output(out_dir, cfg)
    res = run_continual_suite(cfg, out)
    zs = float(np.median([c.zero_shot_ratio for c in res]))
    rel = float(np.median([c.relearned / c.baseline for c in res]))
    ok = zs > 3.0 and rel <= 1.10
    return _finish(6, "continual retention", ok,
                   f"zero-shot {zs:.1f}x baseline (>3x), after {cfg.run['relearn_steps']} relearning step(s) "
                   f"{rel:.2f}x baseline (<=1.10x), median of {len(res)}",
                   t0, 600, {"zero_shot_ratio": zs, "relearned_ratio": rel}, out)


def check_7(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("damage")
    out = _output(out_dir, cfg)
    res = run_damage_recovery(cfg, out)
    ratio = float(np.median([d.ratio for d in res]))
    hit = float(np.median([d.after / d.baseline for d in res]))
    return _finish(7, "damage recovery", ratio <= 10.0,
                   f"recovered {ratio:.2f}x baseline (<=10x); right after ablation {hit:.1f}x, median of {len(res)}",
                   t0, 900, {"ratio": ratio, "after_ratio": hit}, out)


def check_8(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("criticality")
    out = _output(out_dir, cfg)
    res = run_criticality(cfg, out)
    rho = float(np.mean([c.final_third_mean() for c in res]))
    return _finish(8, "criticality", 0.8 <= rho <= 1.2, f"final-third mean rho {rho:.3f} (in [0.8, 1.2])",
                   t0, 600, {"rho": rho}, out)


def check_9(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("memory")
    out = _output(out_dir, cfg)
    res = run_memory_capacity(cfg, out)
    d1 = float(np.mean([m.at(1) for m in res]))
    d6 = float(np.mean([m.at(6) for m in res]))
    return _finish(9, "memory capacity", d1 >= 0.9 and d6 >= 0.4,
                   f"R2 delay 1 {d1:.3f} (>=0.9), delay 6 {d6:.3f} (>=0.4)", t0, 600, {"d1": d1, "d6": d6}, out)


def check_10(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    v = compositional_capacity(64, 4, 32, 0.15)
    err = abs(v - 7.6e8) / 7.6e8
    return _finish(10, "capacity formula", err <= 0.02, f"{v:.4e} vs 7.6e8 ({err:.1%} off, <=2%)",
                   t0, None, {"value": v, "rel_error": err})


def check_11(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    cfg = default_config("rl")
    out = _output(out_dir, cfg)
    res = run_rl(cfg, out)
    gains = [r.quartiles()[1] - r.quartiles()[0] for r in res]
    margins = [r.margin_sd for r in res]
    g, m = float(np.median(gains)), float(np.median(margins))
    return _finish(11, "RL trend", g > 0 and m >= 2.0,
                   f"moving average first->last quartile {g:+.1f}, {m:.1f} baseline sd above random (>=2), "
                   f"median of {len(res)}", t0, 1800, {"quartile_gain": g, "margin_sd": m}, out)


# small but non-trivial runs of every kind that logs per-step records
DETERMINISM_RUNS = {
    "predict": ["run.steps=600", "run.log_every=50", "run.rho_every=200", "switches.structural=true",
                "structure.structural_period=200"],
    "exactness": ["experiment.seeds=0", "run.train_steps=200", "run.trajectory_steps=20"],
    "nlms_ablation": ["run.steps=300", "run.window=50"],
    "rl": ["experiment.seeds=0", "run.episodes=4", "run.baseline_episodes=4"],
}


def metric_bytes(kind: str, overrides, directory) -> bytes:
    from .config import load_config
    cfg = load_config(kind=kind, overrides=overrides)
    out = Output(directory, cfg)
    try:
        run_experiment(cfg, out)
    finally:
        out.close()
    return (Path(directory) / "metrics.jsonl").read_bytes()


def check_12(out_dir=None) -> CheckResult:
    t0 = time.perf_counter()
    same = {}
    with tempfile.TemporaryDirectory() as tmp:
        for kind, ov in DETERMINISM_RUNS.items():
            a = metric_bytes(kind, ov, Path(tmp) / kind / "a")
            b = metric_bytes(kind, ov, Path(tmp) / kind / "b")
            same[kind] = bool(a) and a == b
    bad = [k for k, v in same.items() if not v]
    return _finish(12, "determinism", not bad,
                   "byte-identical metrics for " + ", ".join(same) if not bad else "differs: " + ", ".join(bad),
                   t0, None, same)


CHECKS = {i: globals()[f"check_{i}"] for i in range(1, 13)}


def run_suite(numbers=None, out_dir=None, report=None) -> list[CheckResult]:
    """Run the selected checks (all by default); ``report`` is called with each result."""
    results = []
    for n in numbers or sorted(CHECKS):
        res = CHECKS[n](out_dir)
        if report is not None:
            report(res)
        results.append(res)
    return results
