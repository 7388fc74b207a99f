"""Experiment configuration: INI files with typed, closed sections.

Layering, lowest to highest precedence: dataclass defaults, the per-kind
defaults in :data:`KIND_DEFAULTS`, the config file, then dotted
``section.key=value`` overrides.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..dynamics import DynamicsParams
from ..learning import PlasticityRates, RateOrderingError
from ..network import LearningSwitches, NetworkConfig
from ..structure import StructuralPolicy


class ConfigError(ValueError):
    pass


KINDS = (
    "predict", "exactness", "alignment", "temporal", "nlms_ablation", "continual",
    "damage", "criticality", "memory", "capacity", "rl",
)


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "mackey_glass"
    tau_mg: float = 17.0
    period: float = 50.0
    amplitude: float = 1.0
    sigma_step: float = 0.1
    delay: int = 0
    horizon: int = 1


@dataclass(frozen=True)
class StructureSection:
    p0: float = 20.0
    k_density: float = 20.0
    k_error: float = 10.0
    grow_count_max: int = 4
    init_scale: float = 0.1
    structural_period: int = 500
    q_admit: float = 0.5
    tfm_alpha: float = 1e-3

    def policy(self) -> StructuralPolicy:
        d = dataclasses.asdict(self)
        d.pop("tfm_alpha")
        return StructuralPolicy(**d)


# Experiment-specific knobs and their defaults.  Types are taken from the defaults.
RUN_DEFAULTS: dict[str, dict] = {
    "predict": dict(steps=4000, log_every=100, eval_steps=0, checkpoint_every=0, rho_every=0,
                    rho_iters=60, ablate_at=0, ablate_fraction=0.0, washout=100),
    "exactness": dict(train_steps=2000, trajectory_steps=100, error_source="analytic", shuffle_seed=1),
    "alignment": dict(steps=20000, log_every=50, washout=100, mse_window=200),
    "temporal": dict(warmup_steps=200, trajectory_steps=24, k_fraction=0.1),
    "nlms_ablation": dict(steps=2000, log_every=20, window=100),
    "continual": dict(max_steps=6000, patience=500, tolerance=0.01, eval_steps=300, b_steps=6000,
                      relearn_steps=1, switch_every=200, switches=10, transfer_steps=300,
                      eval_washout=50, b_kind="square", b_period=50.0, related_period=25.0),
    "damage": dict(pre_steps=6000, post_steps=6000, fraction=0.75, window=300, log_every=100, rho_iters=60),
    "criticality": dict(steps=6000, rho_every=100, rho_iters=60, log_every=100),
    "memory": dict(train_steps=3000, eval_steps=1000, max_delay=10, washout=100),
    "capacity": dict(blocks=64, active=4, ell=32, c=0.15),
    "rl": dict(episodes=800, baseline_episodes=200, gamma=0.99, lam=0.95, eta_pi=0.05,
               reward_scale=0.01, pi_cap=10.0, ma_window=100),
}

# Section overrides applied on top of dataclass defaults for each kind.
KIND_DEFAULTS: dict[str, dict] = {
    "predict": {},
    "exactness": {
        "experiment": dict(seeds="0,1,2,3,4"),
        "network": dict(B=8, ell=16, w_scale=0.15, input_scale=2.0, bias_scale=0.5),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
        "switches": dict(bias=True, trophic=False),
    },
    "alignment": {
        "network": dict(B=8, ell=32, input_scale=4.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
    },
    "temporal": {
        "experiment": dict(seeds="0,1,2,3,4"),
        "network": dict(B=8, ell=32, input_scale=2.0, bias_scale=0.5, w_scale=0.9, c_max=2),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
    },
    "nlms_ablation": {
        "network": dict(B=8, ell=32, input_scale=4.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
    },
    "continual": {
        "experiment": dict(seeds="0,1,2,3,4"),
        "network": dict(B=8, ell=16, input_scale=4.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
        "switches": dict(structural=True),
        "structure": dict(p0=5.0, k_density=5.0),
        "task": dict(kind="sine", period=20.0),
    },
    "damage": {
        "experiment": dict(seeds="0,1,2,3,4"),
        "network": dict(B=8, ell=16, input_scale=4.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
        "switches": dict(structural=True),
    },
    "criticality": {
        "network": dict(B=8, ell=16, input_scale=4.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
        "switches": dict(structural=True),
    },
    "memory": {
        "network": dict(B=8, ell=16, input_scale=2.0, bias_scale=0.25, w_scale=0.9),
        "rates": dict(eta_h=0.5, eta_o=0.25, eta_out=0.05, eta_fb=0.005, eta_d=1e-4, eta_b=1e-5),
        "switches": dict(recurrent=False),
        "task": dict(kind="mackey_glass"),
    },
    "capacity": {},
    "rl": {
        "experiment": dict(seeds="0,1,2"),
        "network": dict(B=8, ell=16, d_in=8, d_out=1, w_scale=0.2, input_scale=12.0, bias_scale=1.5),
        "dynamics": dict(tau_fast=0.5),
        "rates": dict(eta_h=1.0, eta_o=0.5, eta_out=0.1, eta_fb=0.01, eta_d=1e-5, eta_b=0.0),
        "switches": dict(bias=False, trophic=False),
    },
}

_SECTIONS = {
    "network": NetworkConfig,
    "dynamics": DynamicsParams,
    "rates": PlasticityRates,
    "structure": StructureSection,
    "switches": LearningSwitches,
    "task": TaskSpec,
}
# per-seed fields are derived, not configured
_DERIVED = {"network": ("seed", "noise_seed")}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "predict"
    name: str = ""
    seeds: tuple = (0,)
    output: str = "runs"
    plots: bool = True
    network: NetworkConfig = field(default_factory=NetworkConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    rates: PlasticityRates = field(default_factory=PlasticityRates)
    structure: StructureSection = field(default_factory=StructureSection)
    switches: LearningSwitches = field(default_factory=LearningSwitches)
    task: TaskSpec = field(default_factory=TaskSpec)
    run: dict = field(default_factory=dict)

    @property
    def experiment_id(self) -> str:
        return self.name or self.kind

    def network_for(self, seed: int, **changes) -> NetworkConfig:
        return replace(self.network, seed=int(seed), noise_seed=int(seed), **changes)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def with_output(self, output) -> "ExperimentConfig":
        return replace(self, output=str(output))

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind: unknown kind {self.kind!r}")
        if not self.seeds:
            raise ConfigError("experiment.seeds: at least one seed is required")
        try:
            self.rates.validate()
        except RateOrderingError as exc:
            raise ConfigError(f"rates: {exc}") from exc
        n = self.network
        if n.B <= 0 or n.ell <= 0:
            raise ConfigError("network: B and ell must be positive")
        if n.c_max and not 0 < n.c_max <= n.B:
            raise ConfigError("network.c_max: must be in 1..B")
        if n.fb_init not in ("random", "aligned", "zero"):
            raise ConfigError(f"network.fb_init: unknown value {n.fb_init!r}")
        if self.task.kind not in ("mackey_glass", "sine", "square", "random_walk"):
            raise ConfigError(f"task.kind: unsupported source {self.task.kind!r}")
        return self

    # -- serialization ---------------------------------------------------------

    def to_ini(self) -> str:
        """Canonical text form; the config hash is taken over this."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {
            "kind": self.kind, "name": self.name, "seeds": ",".join(str(s) for s in self.seeds),
            "output": self.output, "plots": _fmt(self.plots),
        }
        for sec, cls in _SECTIONS.items():
            obj = getattr(self, sec)
            cp[sec] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(cls)
                       if f.name not in _DERIVED.get(sec, ())}
        cp["run"] = {k: _fmt(v) for k, v in sorted(self.run.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        """sha256 of the canonical form with the output path blanked."""
        return hashlib.sha256(replace(self, output="").to_ini().encode()).hexdigest()[:16]

    def write(self, directory) -> Path:
        path = Path(directory) / "config.resolved.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, like, where: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def default_config(kind: str = "predict") -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    cfg = ExperimentConfig(kind=kind, run=dict(RUN_DEFAULTS[kind]))
    return _apply(cfg, {sec: {k: _fmt(v) for k, v in vals.items()} for sec, vals in KIND_DEFAULTS[kind].items()})


def _apply(cfg: ExperimentConfig, sections: dict) -> ExperimentConfig:
    """Apply ``{section: {key: raw_string}}``; raises on unknown names."""
    changes = {}
    for sec, values in sections.items():
        if not values:
            continue
        if sec == "experiment":
            for key, raw in values.items():
                where = f"experiment.{key}"
                if key == "seeds":
                    try:
                        changes["seeds"] = tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
                    except ValueError:
                        raise ConfigError(f"{where}: expected comma-separated integers") from None
                elif key in ("kind", "name", "output"):
                    changes[key] = raw.strip()
                elif key == "plots":
                    changes[key] = _parse(raw, True, where)
                else:
                    raise ConfigError(f"unknown key {where!r}")
        elif sec == "run":
            kind = changes.get("kind", cfg.kind)
            base = dict(RUN_DEFAULTS.get(kind, {}))
            run = {**base, **{k: v for k, v in cfg.run.items() if k in base}}
            for key, raw in values.items():
                if key not in base:
                    raise ConfigError(f"unknown key 'run.{key}' for kind {kind!r}")
                run[key] = _parse(raw, base[key], f"run.{key}")
            changes["run"] = run
        elif sec in _SECTIONS:
            cls = _SECTIONS[sec]
            obj = changes.get(sec, getattr(cfg, sec))
            names = {f.name for f in fields(cls)} - set(_DERIVED.get(sec, ()))
            upd = {}
            for key, raw in values.items():
                if key not in names:
                    raise ConfigError(f"unknown key '{sec}.{key}'")
                upd[key] = _parse(raw, getattr(obj, key), f"{sec}.{key}")
            try:
                changes[sec] = replace(obj, **upd)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{sec}: {exc}") from exc
        else:
            raise ConfigError(f"unknown section [{sec}]")
    return replace(cfg, **changes)


def parse_overrides(items) -> dict:
    """``["rates.eta_out=0.1", ...]`` -> ``{"rates": {"eta_out": "0.1"}}``."""
    out: dict = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        sec, name = key.strip().split(".", 1)
        out.setdefault(sec, {})[name] = value
    return out


def read_sections(text: str, source: str = "<string>") -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def load_config(path=None, overrides=None, text: str | None = None, kind: str | None = None) -> ExperimentConfig:
    """Build a validated config from a file (or ``text``) plus overrides."""
    if text is None:
        if path is None:
            text = ""
        else:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            text = p.read_text()
    sections = read_sections(text, str(path or "<string>"))
    extra = parse_overrides(overrides)
    kind = (extra.get("experiment", {}).get("kind") or sections.get("experiment", {}).get("kind") or kind or "predict").strip()
    cfg = default_config(kind)
    cfg = _apply(cfg, sections)
    cfg = _apply(cfg, extra)
    return cfg.validate()
