"""Command-line entry point.

Verbs::

    trophic run --config exp.cfg [--seed N] [--out DIR] [--set section.key=value ...]
    trophic validate-config exp.cfg [--set ...]
    trophic replay --checkpoint FILE --config DIR/config.resolved.ini [--out DIR]
    trophic suite [--config desk.cfg] [--only 1,2,...] [--out DIR]
    trophic plot RUN_DIR [--format png]

Exit codes: 0 success, 1 config error, 2 acceptance failure (suite).
Diagnostics go to stderr as ``trophic: <level>: <message>`` lines.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .harness.checkpoint import CheckpointError, checkpoint_extra
from .harness.config import ConfigError, load_config
from .harness.experiments import RESUMABLE, Output, run_experiment
from .harness.metrics import MetricError

EXIT_OK, EXIT_CONFIG, EXIT_SUITE = 0, 1, 2


def _diag(level: str, msg: str):
    print(f"trophic: {level}: {msg}", file=sys.stderr)


def _config(args, path=None):
    overrides = list(args.set or [])
    cfg = load_config(path, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seeds([args.seed])
    return cfg


def _out_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.output or "runs") / f"{cfg.experiment_id.replace('/', '_')}-{cfg.hash()}"


def cmd_validate(args) -> int:
    cfg = _config(args, args.config)
    print(cfg.to_ini(), end="")
    print(f"# config hash {cfg.hash()}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args, args.config)
    d = _out_dir(args, cfg)
    out = Output(d, cfg)
    try:
        run_experiment(cfg, out)
    finally:
        out.close()
    if cfg.plots:
        from .harness.plotting import plot_directory
        plot_directory(d)
    print(d)
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = load_config(args.config, list(args.set or []))
    if cfg.kind not in RESUMABLE:
        raise ConfigError(f"experiment.kind: {cfg.kind!r} runs cannot be replayed (resumable: {', '.join(RESUMABLE)})")
    seed = checkpoint_extra(args.checkpoint, "seed")
    if seed is None:
        raise CheckpointError(f"{args.checkpoint}: no seed recorded")
    cfg = cfg.with_seeds([int(np.asarray(seed).ravel()[0])])
    d = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "replay"
    out = Output(d, cfg)
    try:
        run_experiment(cfg, out, resume=args.checkpoint)
    finally:
        out.close()
    print(d)
    return EXIT_OK


def _suite_numbers(args, path) -> list | None:
    nums = None
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        if not cp.read(path):
            raise ConfigError(f"{path}: cannot read suite config")
        unknown = [s for s in cp.sections() if s != "suite"]
        if unknown:
            raise ConfigError(f"unknown section [{unknown[0]}] in suite config")
        if cp.has_section("suite"):
            bad = [k for k in cp["suite"] if k != "only"]
            if bad:
                raise ConfigError(f"unknown key 'suite.{bad[0]}'")
            if "only" in cp["suite"]:
                nums = cp["suite"]["only"]
    if args.only:
        nums = args.only
    if nums is None:
        return None
    from .harness.acceptance import CHECKS
    try:
        out = [int(s) for s in str(nums).replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(f"suite.only: expected comma-separated criterion numbers, got {nums!r}") from None
    for n in out:
        if n not in CHECKS:
            raise ConfigError(f"suite.only: no criterion {n}")
    return out


def cmd_suite(args) -> int:
    from .harness.acceptance import run_suite
    nums = _suite_numbers(args, args.config)
    results = run_suite(nums, args.out, report=lambda r: print(r.line(), flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    for r in failed:
        _diag("fail", f"criterion {r.number} ({r.name}): {r.detail}")
    return EXIT_SUITE if failed else EXIT_OK


def cmd_plot(args) -> int:
    from .harness.plotting import plot_directory
    paths = plot_directory(args.run_dir, args.format)
    if not paths:
        _diag("warning", f"{args.run_dir}: no curves to plot")
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trophic", description="Local credit assignment experiments.")
    sub = p.add_subparsers(dest="verb", required=True)

    def overrides(sp):
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", help="config file (defaults only if omitted)")
    r.add_argument("--seed", type=int, help="run a single seed")
    r.add_argument("--out", help="output directory")
    overrides(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate-config", help="check a config and print it fully resolved")
    v.add_argument("config")
    v.add_argument("--seed", type=int)
    overrides(v)
    v.set_defaults(func=cmd_validate)

    rp = sub.add_parser("replay", help="resume a run from a checkpoint")
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--config", required=True, help="the run's config.resolved.ini")
    rp.add_argument("--out")
    overrides(rp)
    rp.set_defaults(func=cmd_replay)

    s = sub.add_parser("suite", help="run the acceptance criteria")
    s.add_argument("--config", help="suite config with an optional [suite] only = 1,2,...")
    s.add_argument("--only", help="comma-separated criterion numbers")
    s.add_argument("--out", help="keep experiment outputs here")
    s.set_defaults(func=cmd_suite)

    pl = sub.add_parser("plot", help="render a run's curves to image files")
    pl.add_argument("run_dir")
    pl.add_argument("--format", default="png", choices=("png", "svg", "pdf"))
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        _diag("config-error", str(exc))
        return EXIT_CONFIG
    except (CheckpointError, MetricError, FileNotFoundError) as exc:
        _diag("error", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
