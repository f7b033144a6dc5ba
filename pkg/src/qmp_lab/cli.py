"""Command-line entry point ``qmp-lab``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments
from .experiments import ConfigError, ExperimentConfig
from .model import generate_instance
from .state_evolution import run_se


def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = experiments.preset(args.preset or "fig10a_small")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if args.n is not None:
        overrides["n"] = args.n
    if getattr(args, "solvers", None):
        overrides["solvers"] = tuple(s.strip() for s in args.solvers.split(",") if s.strip())
    if not overrides:
        return cfg
    try:
        return replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_run(args):
    cfg = _load_config(args)
    result = experiments.run_experiment(cfg, args.out, args.workers)
    for name, stats in result.summary["solvers"].items():
        if stats["trials"]:
            print(f"{name:4s} final MSE {stats['final_mse_mean']:.4e} "
                  f"+- {stats['final_mse_stderr']:.2e} ({stats['trials']} trials)")
        else:
            print(f"{name:4s} no successful trials")
    for w in result.summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(result.files)} files to {args.out}")
    return result.exit_code


def _cmd_se(args):
    cfg = _load_config(args)
    inst = generate_instance(cfg.n, cfg.m, cfg.prior, cfg.channel, cfg.field, cfg.seed)
    se_cfg = replace(cfg.se, iters=args.iters or cfg.qmp.max_iters)
    traj = run_se(cfg.prior, cfg.channel, inst.matrices, se_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "se.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iter", "se_v_hat_x"))
        for t, v in enumerate(traj.v_hat_x, 1):
            w.writerow((t, repr(float(v))))
            print(f"{t:3d}  {v:.4e}")
    return experiments.EXIT_OK


def _cmd_selfcheck(args):
    from .selfcheck import run_selfcheck
    return 0 if run_selfcheck(verbose=True) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="qmp-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML experiment config")
        sp.add_argument("--preset", choices=sorted(experiments.PRESETS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int, help="override the signal length")
        sp.add_argument("--out", type=Path, default=Path("results"))

    run = sub.add_parser("run", help="run seeded trials of the selected solvers")
    common(run)
    run.add_argument("--solvers", help="comma-separated subset of qmp,wf,twf")
    run.add_argument("--trials", type=int)
    run.add_argument("--workers", type=int,
                     help=f"worker processes (default: ${experiments.THREADS_ENV} or CPU count)")
    run.set_defaults(func=_cmd_run)

    se = sub.add_parser("se", help="state-evolution trajectory only")
    common(se)
    se.add_argument("--iters", type=int)
    se.set_defaults(func=_cmd_se)

    sc = sub.add_parser("selfcheck", help="run the built-in operator and denoiser oracles")
    sc.set_defaults(func=_cmd_selfcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return experiments.EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
