"""Experiment protocols.

Every ``run_*`` function takes an :class:`ExperimentConfig` and an optional
:class:`Output` (metric sink plus curve directory) and returns a small
result object with the numbers the acceptance checks need.  All randomness
derives from the configured seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import oracle
from ..dynamics import spectral_radius
from ..network import LearningSwitches, Network
from ..oracle import CreditComparison, compare
from ..rl import LanderAgent, LanderEnv, random_policy_baseline
from ..tasks import TaskStream, delayed_recall
from .checkpoint import restore_network, save_network
from .config import ExperimentConfig, TaskSpec
from .metrics import MetricSink, write_curve


class Output:
    """Metric sink plus curve/checkpoint directories for one run."""

    def __init__(self, directory, cfg: ExperimentConfig, append: bool = False, metrics_name: str = "metrics.jsonl"):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        cfg.write(self.dir)
        self.sink = MetricSink(self.dir / metrics_name, cfg.hash(), append=append)

    def log(self, exp: str, step: int, metric: str, value):
        self.sink.log(exp, step, metric, value)

    def log_many(self, exp: str, step: int, values: dict):
        self.sink.log_many(exp, step, values)

    def curve(self, name: str, header, rows):
        return write_curve(self.dir / "curves" / f"{name}.csv", header, rows)

    def checkpoint_path(self, name: str) -> Path:
        return self.dir / "checkpoints" / name

    def close(self):
        self.sink.close()


class NullOutput:
    dir = None

    def log(self, *a):
        pass

    def log_many(self, *a):
        pass

    def curve(self, *a):
        return None

    def checkpoint_path(self, name):
        return None

    def close(self):
        pass


def _out(out):
    return out if out is not None else NullOutput()


def _eid(cfg: ExperimentConfig, seed=None, tag: str | None = None) -> str:
    base = cfg.experiment_id
    if tag:
        base = f"{base}/{tag}"
    return base if seed is None else f"{base}/s{seed}"


# -- building blocks -----------------------------------------------------------------

def build_network(cfg: ExperimentConfig, seed: int, switches: LearningSwitches | None = None, **net_changes) -> Network:
    return Network(
        cfg.network_for(seed, **net_changes), cfg.dynamics, cfg.rates, cfg.structure.policy(),
        cfg.structure.tfm_alpha, switches=replace(switches or cfg.switches),
    )


def task_stream(spec: TaskSpec, seed: int, **changes) -> TaskStream:
    spec = replace(spec, **changes)
    if spec.kind == "mackey_glass":
        params = {"tau_mg": spec.tau_mg}
    elif spec.kind in ("sine", "square"):
        params = {"period": spec.period, "amplitude": spec.amplitude}
    elif spec.kind == "random_walk":
        params = {"sigma_step": spec.sigma_step}
    else:
        raise ValueError(f"unsupported task source {spec.kind!r}")
    return TaskStream(spec.kind, params, seed)


def task_pairs(spec: TaskSpec, seed: int, length: int, **changes):
    return task_stream(spec, seed, **changes).pairs(length, replace(spec, **changes).horizon)


def evaluate(net: Network, u, y, washout: int = 0) -> float:
    """Frozen MSE on ``(u, y)``; the network's state is restored afterwards."""
    snap = net.state.copy()
    err = []
    for t in range(len(u)):
        net.advance(u[t])
        if t >= washout:
            err.append(float(np.mean((net.predict() - y[t]) ** 2)))
    net.state = snap
    return float(np.mean(err)) if err else float("nan")


def r_squared(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    sst = float(np.sum((target - target.mean()) ** 2))
    return 1.0 - float(np.sum((pred - target) ** 2)) / sst if sst > 0 else float("nan")


def _rho(net: Network, u, iters: int) -> float:
    x = net.x[0]
    rho, _ = spectral_radius(net.W, x, net.heads.b, np.atleast_1d(u), net.dparams, iters=max(50, iters),
                             W_in=net.W_in, seed=int(net.state.step))
    return float(rho)


# -- online prediction loop (checkpointable) -------------------------------------------

@dataclass
class PredictResult:
    seed: int
    steps: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    rho_steps: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    events: int = 0
    eval_nrmse: float = float("nan")

    def mean_mse(self, lo: int, hi: int) -> float:
        v = [m for s, m in zip(self.steps, self.mse) if lo < s <= hi]
        return float(np.mean(v)) if v else float("nan")


def predict_loop(cfg: ExperimentConfig, seed: int, out=None, steps: int | None = None, log_every: int = 100,
                 rho_every: int = 0, rho_iters: int = 60, ablate_at: int = 0, ablate_fraction: float = 0.0,
                 checkpoint_every: int = 0, eval_steps: int = 0, resume=None, tag: str | None = None) -> PredictResult:
    """Online training on the configured task with optional damage, spectral tracking and checkpoints.

    Records are logged at multiples of ``log_every``; checkpoints are only
    taken on those boundaries so a resumed run reproduces every later record.
    """
    out = _out(out)
    steps = int(steps if steps is not None else cfg.run.get("steps", 4000))
    if checkpoint_every and checkpoint_every % log_every:
        raise ValueError("checkpoint_every must be a multiple of log_every")
    exp = _eid(cfg, seed, tag)
    net = build_network(cfg, seed)
    u, y = task_pairs(cfg.task, seed, steps + eval_steps)
    res = PredictResult(seed)
    start = 0
    if resume is not None:
        extra = restore_network(net, resume)
        start = int(extra["t"][0])
        for key, xs, vs in (("hist_mse", res.steps, res.mse), ("hist_rho", res.rho_steps, res.rho)):
            h = extra.get(key)
            if h is not None and h.size:
                xs.extend(int(s) for s in h[:, 0])
                vs.extend(float(v) for v in h[:, 1])
        res.events = int(extra.get("events", np.zeros(1))[0])
    acc, n = 0.0, 0
    for t in range(start, steps):
        if ablate_at and t == ablate_at:
            removed = net.ablate(ablate_fraction, [seed, t, 0xAB1])
            out.log(exp, t, "ablated_blocks", len(removed))
            out.log(exp, t, "density", net.W.density())
        info = net.train_step(u[t], y[t])
        acc += info.sq_error
        n += 1
        step = t + 1
        if info.event is not None:
            res.events += 1
            ev = info.event
            out.log_many(exp, step, {"event.p": ev.p, "event.theta": ev.theta, "event.removed": len(ev.removed),
                                     "event.added": len(ev.added), "event.density": ev.density_after})
        if rho_every and step % rho_every == 0:
            r = _rho(net, u[t], rho_iters)
            res.rho_steps.append(step)
            res.rho.append(r)
            out.log(exp, step, "rho", r)
        if step % log_every == 0:
            m = acc / n
            res.steps.append(step)
            res.mse.append(m)
            out.log_many(exp, step, {"mse": m, "nmse_ewma": net.normalized_error(), "density": net.W.density()})
            acc, n = 0.0, 0
            if checkpoint_every and step % checkpoint_every == 0 and out.checkpoint_path("x") is not None:
                save_network(out.checkpoint_path(f"s{seed}_t{step}.bin"), net, {
                    "t": np.array([step]), "seed": np.array([seed]), "events": np.array([res.events]),
                    "hist_mse": np.array([res.steps, res.mse]).T.reshape(-1, 2),
                    "hist_rho": np.array([res.rho_steps, res.rho]).T.reshape(-1, 2),
                })
    if eval_steps:
        pred = []
        for t in range(steps, steps + eval_steps):
            pred.append(net.eval_step(u[t]).y_hat[0, 0])
        target = y[steps:steps + eval_steps]
        sd = float(np.std(target))
        res.eval_nrmse = float(np.sqrt(np.mean((np.asarray(pred) - target) ** 2)) / sd) if sd > 0 else float("nan")
        out.log(exp, steps + eval_steps, "eval_nrmse", res.eval_nrmse)
    out.curve(f"{exp.replace('/', '_')}_mse", ["step", "mse"], zip(res.steps, res.mse))
    if res.rho:
        out.curve(f"{exp.replace('/', '_')}_rho", ["step", "rho"], zip(res.rho_steps, res.rho))
    return res


def run_predict(cfg: ExperimentConfig, out=None, resume=None, seeds=None) -> list:
    r = cfg.run
    return [predict_loop(cfg, s, out, r["steps"], r["log_every"], r["rho_every"], r["rho_iters"], r["ablate_at"],
                         r["ablate_fraction"], r["checkpoint_every"], r["eval_steps"], resume=resume)
            for s in (seeds or cfg.seeds)]


# -- credit-assignment exactness ------------------------------------------------------------

@dataclass
class ExactnessResult:
    per_seed: list
    feedback: list
    shuffled: list

    @property
    def pearson(self) -> float:
        return float(np.mean([c.pearson for c in self.per_seed]))

    @property
    def spearman(self) -> float:
        return float(np.mean([c.spearman for c in self.per_seed]))


def exactness_maps(cfg: ExperimentConfig, seed: int):
    """Train, freeze, record; returns ``(H, H_feedback, G, trajectory)``."""
    r = cfg.run
    T = int(r["trajectory_steps"])
    net = build_network(cfg, seed)
    u, y = task_pairs(cfg.task, seed, r["train_steps"] + T)
    for t in range(r["train_steps"]):
        net.train_step(u[t], y[t])
    ts = r["train_steps"]
    tr = oracle.record_trajectory(net, u[ts:ts + T], y[ts:ts + T])
    G = oracle.bptt_block_gradients(tr, tr.W)
    H_true = oracle.local_heuristic(tr, net.cfg.ell, oracle_error=True)
    H_fb = oracle.local_heuristic(tr, net.cfg.ell, oracle_error=False)
    H = H_true if r["error_source"] == "analytic" else H_fb
    return H, H_fb, G, tr


def run_exactness(cfg: ExperimentConfig, out=None) -> ExactnessResult:
    out = _out(out)
    if cfg.run["error_source"] not in ("analytic", "feedback"):
        raise ValueError("run.error_source must be 'analytic' or 'feedback'")
    per, fb, shuf, rows = [], [], [], []
    for seed in cfg.seeds:
        H, H_fb, G, _ = exactness_maps(cfg, seed)
        c = compare(H, G)
        c_fb = compare(H_fb, G)
        perm = np.random.default_rng([seed, cfg.run["shuffle_seed"]]).permutation(G.size)
        c_sh = compare(H, G.ravel()[perm])
        per.append(c)
        fb.append(c_fb)
        shuf.append(c_sh.pearson)
        exp = _eid(cfg, seed)
        out.log_many(exp, 0, {"pearson": c.pearson, "spearman": c.spearman, "cosine": c.cosine,
                              "auroc": c.auroc, "precision_at_k": c.precision_at_k,
                              "feedback.pearson": c_fb.pearson, "feedback.spearman": c_fb.spearman,
                              "shuffled.pearson": c_sh.pearson})
        B = G.shape[0]
        rows += [(seed, i, j, float(H[i, j]), float(G[i, j])) for i in range(B) for j in range(B)]
    res = ExactnessResult(per, fb, shuf)
    out.log_many(_eid(cfg, tag="summary"), 0, {"pearson": res.pearson, "spearman": res.spearman,
                                              "feedback.pearson": float(np.mean([c.pearson for c in fb]))})
    out.curve(f"{cfg.experiment_id}_scatter", ["seed", "pre_block", "post_block", "H_post", "G_post"], rows)
    return res


@dataclass
class TemporalResult:
    diagonal: CreditComparison
    ema: CreditComparison
    per_seed: list = field(default_factory=list)


def temporal_maps(cfg: ExperimentConfig, seed: int, trajectory_steps: int | None = None):
    """Per-synapse (exact, diagonal, ema-only) gradient vectors over existing synapses."""
    r = cfg.run
    T = int(trajectory_steps or r["trajectory_steps"])
    net = build_network(cfg, seed)
    u, y = task_pairs(cfg.task, seed, r["warmup_steps"] + T)
    for t in range(r["warmup_steps"]):
        net.train_step(u[t], y[t])
    w = r["warmup_steps"]
    tr = oracle.record_trajectory(net, u[w:w + T], y[w:w + T])
    ex = oracle.forward_eprop_exact(tr, tr.W)
    diag, ema = oracle.diagonal_approx(tr)
    return ex.grad, diag[ex.post, ex.pre], ema[ex.post, ex.pre]


def run_temporal(cfg: ExperimentConfig, out=None) -> TemporalResult:
    out = _out(out)
    kf = cfg.run["k_fraction"]
    per, rows = [], []
    for seed in cfg.seeds:
        exact, diag, ema = temporal_maps(cfg, seed)
        cd, ce = compare(diag, exact, kf), compare(ema, exact, kf)
        per.append((cd, ce))
        out.log_many(_eid(cfg, seed), 0, {
            "diagonal.pearson": cd.pearson, "diagonal.auroc": cd.auroc, "diagonal.cosine": cd.cosine,
            "diagonal.precision_at_k": cd.precision_at_k,
            "ema.pearson": ce.pearson, "ema.auroc": ce.auroc, "ema.cosine": ce.cosine,
        })
        idx = np.linspace(0, exact.size - 1, min(exact.size, 2000)).astype(int)
        rows += [(seed, float(exact[i]), float(diag[i]), float(ema[i])) for i in idx]

    def avg(which, name):
        return float(np.mean([getattr(p[which], name) for p in per]))

    d = CreditComparison(avg(0, "pearson"), avg(0, "spearman"), avg(0, "cosine"), avg(0, "auroc"), avg(0, "precision_at_k"))
    e = CreditComparison(avg(1, "pearson"), avg(1, "spearman"), avg(1, "cosine"), avg(1, "auroc"), avg(1, "precision_at_k"))
    out.log_many(_eid(cfg, tag="summary"), 0, {"diagonal.pearson": d.pearson, "diagonal.auroc": d.auroc,
                                              "ema.pearson": e.pearson, "ema.auroc": e.auroc})
    out.curve(f"{cfg.experiment_id}_scatter", ["seed", "exact", "diagonal", "ema"], rows)
    return TemporalResult(d, e, per)


# -- feedback alignment --------------------------------------------------------------------

@dataclass
class AlignmentResult:
    steps: np.ndarray
    cosine: np.ndarray
    mse: np.ndarray
    initial_mse: float
    first_quarter: float
    last_quarter: float
    mse_step: int | None
    cosine_step: int | None

    @property
    def gain(self) -> float:
        return self.last_quarter - self.first_quarter

    @property
    def learns_before_aligning(self) -> bool:
        return self.mse_step is not None and (self.cosine_step is None or self.mse_step < self.cosine_step)


def _cos(a, b) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    return float(a @ b) / (na * nb) if na > 0 and nb > 0 else 0.0


def alignment_curve(cfg: ExperimentConfig, seed: int, out=None) -> AlignmentResult:
    out = _out(out)
    r = cfg.run
    steps, wash, every, win = int(r["steps"]), int(r["washout"]), int(r["log_every"]), int(r["mse_window"])
    net = build_network(cfg, seed)
    u, y = task_pairs(cfg.task, seed, steps)
    exp = _eid(cfg, seed)
    rec_s, rec_c, rec_m = [], [], []
    cos_acc, sq_hist = [], []
    for t in range(steps):
        net.advance(u[t])
        H = net.heads
        d = net.predict() - y[t]
        eps = (d @ H.W_fb.T).ravel()
        true = (d @ H.R).ravel()
        c = _cos(eps, true)
        net.learn(y[t])
        sq_hist.append(float(np.mean(d * d)))
        if t < wash:
            continue
        cos_acc.append(c)
        if (t + 1) % every == 0:
            m = float(np.mean(sq_hist[-win:]))
            cm = float(np.mean(cos_acc))
            cos_acc = []
            rec_s.append(t + 1)
            rec_c.append(cm)
            rec_m.append(m)
            out.log_many(exp, t + 1, {"cosine": cm, "mse": m})
    s, c, m = np.array(rec_s), np.array(rec_c), np.array(rec_m)
    initial = float(np.mean(sq_hist[:win]))     # untrained readout, from step 0
    q = max(1, len(c) // 4)
    mse_hit = np.nonzero(m <= 0.2 * initial)[0]
    cos_hit = np.nonzero(c > 0.8)[0]
    res = AlignmentResult(s, c, m, initial, float(c[:q].mean()), float(c[-q:].mean()),
                          int(s[mse_hit[0]]) if mse_hit.size else None, int(s[cos_hit[0]]) if cos_hit.size else None)
    out.log_many(exp, steps, {"initial_mse": initial, "first_quarter_cosine": res.first_quarter,
                              "last_quarter_cosine": res.last_quarter,
                              "mse_20pct_step": res.mse_step if res.mse_step is not None else -1,
                              "cosine_0.8_step": res.cosine_step if res.cosine_step is not None else -1})
    out.curve(f"{exp.replace('/', '_')}_alignment", ["step", "cosine", "mse"], zip(s.tolist(), c.tolist(), m.tolist()))
    return res


def run_alignment(cfg: ExperimentConfig, out=None) -> list:
    return [alignment_curve(cfg, s, out) for s in cfg.seeds]


# -- NLMS ablation ------------------------------------------------------------------------------

ABLATIONS = {
    "original": dict(nlms=True, fan_in_scaling=True),
    "no_nlms": dict(nlms=False, fan_in_scaling=True),
    "no_arch_scaling": dict(nlms=True, fan_in_scaling=False),
    "neither": dict(nlms=False, fan_in_scaling=False),
}


@dataclass
class AblationResult:
    curves: dict
    reduction: dict


def run_nlms_ablation(cfg: ExperimentConfig, out=None) -> list:
    """Returns one :class:`AblationResult` per seed.

    Reduction is ``1 - final/initial`` with both measured as mean squared
    error over ``window`` steps.
    """
    out = _out(out)
    r = cfg.run
    steps, every, win = int(r["steps"]), int(r["log_every"]), int(r["window"])
    results = []
    for seed in cfg.seeds:
        u, y = task_pairs(cfg.task, seed, steps)
        curves, red = {}, {}
        for name, toggles in ABLATIONS.items():
            net = build_network(cfg, seed, switches=replace(cfg.switches, **toggles))
            sq = np.empty(steps)
            for t in range(steps):
                info = net.train_step(u[t], y[t])
                sq[t] = info.sq_error if math.isfinite(info.sq_error) else np.inf
            curve = [(t + 1, float(np.mean(sq[max(0, t + 1 - win):t + 1]))) for t in range(every - 1, steps, every)]
            curves[name] = curve
            init, final = float(np.mean(sq[:win])), float(np.mean(sq[-win:]))
            red[name] = 1.0 - final / init if init > 0 and math.isfinite(final) else -math.inf
            exp = _eid(cfg, seed, name)
            for s, m in curve:
                out.log(exp, s, "mse", m)
            out.log_many(exp, steps, {"initial_mse": init, "final_mse": final, "reduction": red[name]})
        rows = [[curves["original"][i][0]] + [curves[n][i][1] for n in ABLATIONS] for i in range(len(curves["original"]))]
        out.curve(f"{cfg.experiment_id}_s{seed}_mse", ["step", *ABLATIONS], rows)
        results.append(AblationResult(curves, red))
    return results


# -- continual learning -----------------------------------------------------------------------------

def train_until_converged(net: Network, u, y, start: int, max_steps: int, patience: int, tolerance: float):
    """Train from ``start`` until the EWMA(0.99) MSE improves by < ``tolerance`` over ``patience`` steps.

    Returns ``(steps_used, ewma)``.
    """
    ewma, hist = None, []
    for k in range(max_steps):
        t = start + k
        info = net.train_step(u[t], y[t])
        ewma = info.sq_error if ewma is None else 0.99 * ewma + 0.01 * info.sq_error
        hist.append(ewma)
        if k >= 2 * patience and k % 50 == 0:
            old = hist[-patience - 1]
            if old <= 0 or (old - ewma) / old < tolerance:
                return k + 1, ewma
    return max_steps, ewma


@dataclass
class ContinualResult:
    baseline: float
    zero_shot: float
    relearned: float
    retention: float
    convergence_steps: int
    reconvergence_steps: int
    switching: list
    transfer: float

    @property
    def zero_shot_ratio(self) -> float:
        return self.zero_shot / self.baseline if self.baseline > 0 else math.inf

    @property
    def relearn_gap(self) -> float:
        return abs(self.relearned - self.baseline) / self.baseline if self.baseline > 0 else math.inf


def retention_score(relearned: float, baseline: float) -> float:
    return 1.0 - (relearned - baseline) / baseline


def continual_seed(cfg: ExperimentConfig, seed: int, out=None) -> ContinualResult:
    out = _out(out)
    r = cfg.run
    exp = _eid(cfg, seed)
    spec_a = cfg.task
    spec_b = replace(cfg.task, kind=r["b_kind"], period=r["b_period"])
    horizon = r["max_steps"] * 2 + r["b_steps"] + 4 * r["eval_steps"] + 10
    ua, ya = task_pairs(spec_a, seed, horizon)
    ub, yb = task_pairs(spec_b, seed + 1, horizon)
    E, W = int(r["eval_steps"]), int(r["eval_washout"])

    # retention
    net = build_network(cfg, seed)
    n_a, _ = train_until_converged(net, ua, ya, 0, r["max_steps"], r["patience"], r["tolerance"])
    base = evaluate(net, ua[n_a:n_a + E], ya[n_a:n_a + E], W)
    for t in range(r["b_steps"]):
        net.train_step(ub[t], yb[t])
    pos = n_a + E
    zero = evaluate(net, ua[pos:pos + E], ya[pos:pos + E], W)
    for k in range(r["relearn_steps"]):
        net.train_step(ua[pos + k], ya[pos + k])
    pos += r["relearn_steps"]
    relearned = evaluate(net, ua[pos:pos + E], ya[pos:pos + E], W)
    n_re, _ = train_until_converged(net, ua, ya, pos, r["max_steps"], r["patience"], r["tolerance"])
    retention = retention_score(relearned, base)
    out.log_many(exp, 0, {"convergence_steps": n_a, "baseline_mse": base, "zero_shot_mse": zero,
                          "relearned_mse": relearned, "retention": retention,
                          "reconvergence_steps": n_re, "relearn_speed_ratio": n_a / max(1, n_re)})

    # switching: alternate A and B
    net = build_network(cfg, seed)
    seg_rows = []
    for k in range(r["switches"]):
        src_u, src_y = (ua, ya) if k % 2 == 0 else (ub, yb)
        lo = k * r["switch_every"]
        sq = [net.train_step(src_u[t], src_y[t]).sq_error for t in range(lo, lo + r["switch_every"])]
        seg_rows.append((k, k % 2, float(np.mean(sq))))
        out.log(exp, 1 + k, "switch_segment_mse", float(np.mean(sq)))
    out.curve(f"{exp.replace('/', '_')}_switching", ["segment", "task_b", "mse"], seg_rows)

    # transfer: A-pretrained vs fresh on a related task
    uc, yc = task_pairs(replace(spec_a, period=r["related_period"]), seed + 2, r["transfer_steps"])
    fresh = build_network(cfg, seed)
    fresh_err = float(np.mean([fresh.train_step(uc[t], yc[t]).sq_error for t in range(len(uc))]))
    pre = build_network(cfg, seed)
    train_until_converged(pre, ua, ya, 0, r["max_steps"], r["patience"], r["tolerance"])
    pre_err = float(np.mean([pre.train_step(uc[t], yc[t]).sq_error for t in range(len(uc))]))
    transfer = 1.0 - pre_err / fresh_err if fresh_err > 0 else 0.0
    out.log_many(exp, 1 + r["switches"], {"transfer.fresh_mse": fresh_err, "transfer.pretrained_mse": pre_err,
                                          "transfer.improvement": transfer})
    return ContinualResult(base, zero, relearned, retention, n_a, n_re, seg_rows, transfer)


def run_continual_suite(cfg: ExperimentConfig, out=None) -> list:
    res = [continual_seed(cfg, s, out) for s in cfg.seeds]
    _out(out).log_many(_eid(cfg, tag="summary"), 0, {
        "median.zero_shot_ratio": float(np.median([c.zero_shot_ratio for c in res])),
        "median.retention": float(np.median([c.retention for c in res])),
        "median.transfer": float(np.median([c.transfer for c in res])),
    })
    return res


# -- damage, criticality, memory ----------------------------------------------------------------------

@dataclass
class DamageResult:
    seed: int
    baseline: float
    after: float
    recovered: float
    curve: PredictResult

    @property
    def ratio(self) -> float:
        return self.recovered / self.baseline if self.baseline > 0 else math.inf


def run_damage_recovery(cfg: ExperimentConfig, out=None, resume=None) -> list:
    r = cfg.run
    pre, post, win = int(r["pre_steps"]), int(r["post_steps"]), int(r["window"])
    results = []
    for seed in cfg.seeds:
        res = predict_loop(cfg, seed, out, pre + post, r["log_every"], 0, r["rho_iters"], pre if r["fraction"] > 0 else 0,
                           r["fraction"], resume=resume)
        dr = DamageResult(seed, res.mean_mse(pre - win, pre), res.mean_mse(pre, pre + win),
                          res.mean_mse(pre + post - win, pre + post), res)
        _out(out).log_many(_eid(cfg, seed, "summary"), pre + post, {
            "baseline_mse": dr.baseline, "post_damage_mse": dr.after, "recovered_mse": dr.recovered,
            "recovery_ratio": dr.ratio})
        results.append(dr)
    return results


@dataclass
class CriticalityResult:
    seed: int
    steps: list
    rho: list

    def final_third_mean(self) -> float:
        if not self.steps:
            return float("nan")
        cut = self.steps[-1] * 2 / 3
        v = [x for s, x in zip(self.steps, self.rho) if s > cut]
        return float(np.mean(v))


def run_criticality(cfg: ExperimentConfig, out=None, resume=None) -> list:
    r = cfg.run
    results = []
    for seed in cfg.seeds:
        res = predict_loop(cfg, seed, out, r["steps"], r["log_every"], r["rho_every"], r["rho_iters"], resume=resume)
        cr = CriticalityResult(seed, res.rho_steps, res.rho)
        _out(out).log(_eid(cfg, seed, "summary"), r["steps"], "rho_final_third", cr.final_third_mean())
        results.append(cr)
    return results


@dataclass
class MemoryResult:
    delays: list
    r2: list
    current_input_r2: list = field(default_factory=list)

    def at(self, d: int) -> float:
        return self.r2[self.delays.index(d)]


def run_memory_capacity(cfg: ExperimentConfig, out=None) -> list:
    """Delayed recall R² for delays ``1..max_delay``; one readout per delay, trained online."""
    out = _out(out)
    r = cfg.run
    n_tr, n_ev, wash = int(r["train_steps"]), int(r["eval_steps"]), int(r["washout"])
    results = []
    for seed in cfg.seeds:
        src = task_stream(cfg.task, seed).generate(n_tr + n_ev)
        delays, r2s, naives = [], [], []
        for d in range(1, int(r["max_delay"]) + 1):
            u, y = delayed_recall(src, d)
            net = build_network(cfg, seed)
            for t in range(n_tr):
                net.train_step(u[t], y[t])
            pred = np.array([net.eval_step(u[t]).y_hat[0, 0] for t in range(n_tr, n_tr + n_ev)])
            target = y[n_tr + wash:n_tr + n_ev]
            r2 = r_squared(pred[wash:], target)
            # what the current input alone explains about the delayed one
            naive = float(np.corrcoef(u[n_tr + wash:n_tr + n_ev], target)[0, 1] ** 2)
            delays.append(d)
            r2s.append(r2)
            naives.append(naive)
            out.log_many(_eid(cfg, seed), d, {"r2": r2, "r2_current_input": naive})
        out.curve(f"{cfg.experiment_id}_s{seed}_r2", ["delay", "r2", "r2_current_input"], zip(delays, r2s, naives))
        results.append(MemoryResult(delays, r2s, naives))
    return results


def compositional_capacity(B: int, K: int, ell: int, c: float = 0.15) -> float:
    """``C(B, K) * (c * ell)^K``."""
    if K < 0 or B < 0:
        raise ValueError("B and K must be non-negative")
    return float(math.comb(B, K)) * (c * ell) ** K


def run_capacity(cfg: ExperimentConfig, out=None) -> float:
    r = cfg.run
    v = compositional_capacity(int(r["blocks"]), int(r["active"]), int(r["ell"]), float(r["c"]))
    _out(out).log(cfg.experiment_id, 0, "capacity", v)
    return v


# -- reinforcement learning ---------------------------------------------------------------------

@dataclass
class RLResult:
    seed: int
    rewards: np.ndarray
    moving_average: np.ndarray
    baseline_mean: float
    baseline_sd: float

    def quartiles(self):
        q = max(1, len(self.moving_average) // 4)
        return float(self.moving_average[:q].mean()), float(self.moving_average[-q:].mean())

    @property
    def margin_sd(self) -> float:
        return (float(self.moving_average[-1]) - self.baseline_mean) / self.baseline_sd if self.baseline_sd > 0 else math.inf


def moving_average(v, window: int) -> np.ndarray:
    v = np.asarray(v, float)
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def run_rl(cfg: ExperimentConfig, out=None) -> list:
    out = _out(out)
    r = cfg.run
    results = []
    for seed in cfg.seeds:
        env = LanderEnv()
        base = random_policy_baseline(env, int(r["baseline_episodes"]), seed + 10_000)
        net = build_network(cfg, seed)
        agent = LanderAgent(net, r["gamma"], r["lam"], r["eta_pi"], r["reward_scale"], r["pi_cap"], seed)
        exp = _eid(cfg, seed)
        rewards = []
        for ep in range(int(r["episodes"])):
            res = agent.run_episode(env, ep, [seed, 1, ep])
            rewards.append(res.total_reward)
            ma = float(np.mean(rewards[-int(r["ma_window"]):]))
            out.log_many(exp, ep, {"reward": res.total_reward, "steps": res.steps, "landed": int(res.landed),
                                   "moving_average": ma})
        rewards = np.array(rewards)
        ma = moving_average(rewards, int(r["ma_window"]))
        rr = RLResult(seed, rewards, ma, float(base.mean()), float(base.std()))
        first, last = rr.quartiles()
        out.log_many(exp, int(r["episodes"]), {"baseline_mean": rr.baseline_mean, "baseline_sd": rr.baseline_sd,
                                               "first_quartile_ma": first, "last_quartile_ma": last,
                                               "margin_sd": rr.margin_sd})
        out.curve(f"{exp.replace('/', '_')}_episodes", ["episode", "reward", "moving_average"],
                  zip(range(len(rewards)), rewards.tolist(), ma.tolist()))
        results.append(rr)
    return results


RUNNERS = {
    "predict": run_predict,
    "exactness": run_exactness,
    "alignment": run_alignment,
    "temporal": run_temporal,
    "nlms_ablation": run_nlms_ablation,
    "continual": run_continual_suite,
    "damage": run_damage_recovery,
    "criticality": run_criticality,
    "memory": run_memory_capacity,
    "capacity": run_capacity,
    "rl": run_rl,
}
RESUMABLE = ("predict", "damage", "criticality")


def run_experiment(cfg: ExperimentConfig, out=None, resume=None):
    fn = RUNNERS[cfg.kind]
    if resume is not None:
        if cfg.kind not in RESUMABLE:
            raise ValueError(f"experiment kind {cfg.kind!r} does not support replay from a checkpoint")
        return fn(cfg, out, resume=resume)
    return fn(cfg, out)
