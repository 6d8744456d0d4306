"""``reachloop`` command-line tool.

Subcommands::

    reachloop verify   --config F [--controller F] [--out DIR] [--check]
    reachloop learn    --config F [--seed K] [--out DIR] [--check]
    reachloop simulate --config F [--controller F] [--samples N] [--seed K] [--out DIR] [--check]
    reachloop report   [DIR] [--out DIR]

``--config`` accepts a path or the name of a shipped config (``acc_geometric``).
Exit codes of verify: 0 reach-avoid, 1 unsafe, 2 goal not reached, 3 unknown.
learn exits 0 on a certified controller and 2 otherwise; simulate exits 0 when
every trace is safe and reaches the goal, 1 if any is unsafe, 2 otherwise.
Malformed configs or controllers exit 64, missing run artifacts 66.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, shipped_configs

EX_USAGE = 64
EX_NOINPUT = 66


def _out_dir(args, cfg, suffix=""):
    if args.out:
        return Path(args.out)
    base = cfg.output or f"runs/{cfg.name}"
    return Path(base + suffix)


def _load_controller(args, cfg):
    from .experiments import read_controller

    if args.controller:
        try:
            return read_controller(args.controller)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read controller: {exc}", source=args.controller) from None
    if cfg.template is None:
        raise ConfigError("config has no explicit controller; pass --controller", source=cfg.source)
    return cfg.template


def cmd_verify(args) -> int:
    from .experiments import run_verify

    cfg = load_config(args.config)
    controller = _load_controller(args, cfg)
    if args.check:
        print(f"ok: {cfg.name}")
        return 0
    verdict = run_verify(cfg, controller, _out_dir(args, cfg, "-verify"))
    print(f"verdict: {verdict}")
    return verdict.exit_code


def cmd_learn(args) -> int:
    from .experiments import run_learn

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.max_iter is not None:
        cfg = _with_max_iter(cfg, args.max_iter)
    if args.check:
        print(f"ok: {cfg.name}")
        return 0
    out = _out_dir(args, cfg, f"-seed{cfg.learn.seed}")
    outcome = run_learn(cfg, out)
    rep = outcome.report
    print(f"{cfg.name} seed {cfg.learn.seed}: {outcome.verdict} after {outcome.iterations} iterations")
    print(f"X_I coverage {rep['initset']['coverage']:.3f}; artifacts in {out}")
    if outcome.rates is not None:
        print(f"empirical safe rate {outcome.rates.safe_rate:.3f}, goal rate {outcome.rates.goal_rate:.3f}")
    return 0 if outcome.success else 2


def _with_max_iter(cfg, n):
    from dataclasses import replace

    cfg = replace(cfg, learn=replace(cfg.learn, max_iter=n))
    if cfg.hybrid is not None:
        from .config import StageConfig

        cfg.hybrid = {
            k: {**v, "cfg": StageConfig(v["cfg"].template, replace(v["cfg"].learn, max_iter=n))}
            for k, v in cfg.hybrid.items()
        }
    return cfg


def cmd_simulate(args) -> int:
    from .experiments import run_simulate, simulate_exit_code

    cfg = load_config(args.config)
    controller = _load_controller(args, cfg)
    n = args.samples if args.samples is not None else cfg.samples
    if n < 1:
        raise ConfigError("--samples must be >= 1")
    if args.check:
        print(f"ok: {cfg.name}")
        return 0
    seed = args.seed if args.seed is not None else 0
    rep = run_simulate(cfg, controller, n, seed, _out_dir(args, cfg, "-simulate"))
    print(f"samples {rep.samples}: safe rate {rep.safe_rate:.3f}, goal rate {rep.goal_rate:.3f}, diverged {rep.diverged}")
    return simulate_exit_code(rep)


def cmd_report(args) -> int:
    from .experiments import REPORT_FILES, MissingArtifacts, run_report

    directory = Path(args.directory or args.out or "runs")
    try:
        _, text = run_report(directory)
    except MissingArtifacts as exc:
        print(f"error: no complete run found in {exc.directory}", file=sys.stderr)
        print("missing: " + ", ".join(exc.missing), file=sys.stderr)
        print("expected per run: " + ", ".join(REPORT_FILES), file=sys.stderr)
        return EX_NOINPUT
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachloop", description="Verification-in-the-loop controller synthesis.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, controller=False, seed=False, samples=False):
        sp.add_argument("--config", required=True, help="config path or shipped name: " + ", ".join(shipped_configs()))
        sp.add_argument("--out", help="run directory for artifacts")
        sp.add_argument("--check", action="store_true", help="validate inputs only, compute nothing")
        if controller:
            sp.add_argument("--controller", help="controller document written by 'learn'")
        if seed:
            sp.add_argument("--seed", type=int)
        if samples:
            sp.add_argument("--samples", type=int)

    sp = sub.add_parser("verify", help="compute the flowpipe and reach-avoid verdict")
    common(sp, controller=True)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("learn", help="learn a controller and its certified initial set")
    common(sp, seed=True)
    sp.add_argument("--max-iter", type=int, help="override the learner's iteration cap")
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("simulate", help="empirical safe and goal-reaching rates")
    common(sp, controller=True, seed=True, samples=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="aggregate learn runs into a summary table")
    sp.add_argument("directory", nargs="?")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: malformed document at line {exc.lineno}, column {exc.colno}: {exc.msg}", file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
