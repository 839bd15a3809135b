"""Command-line entry point: ``bac train|eval|plot|verify|sweep``.

On failure the last line on stderr is a single JSON object
``{"error": <kind>, "message": <text>}`` and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from bac.agent import ConfigError
from bac.checkpoint import CheckpointError, load_checkpoint, read_meta
from bac.envs import make_env
from bac.harness import (
    ExperimentConfig,
    emit_plot,
    evaluate,
    load_config,
    parse_value,
    read_log,
    run_experiment,
    summarize,
    with_override,
)
from bac.verify import run_all

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config = with_override(config, "seeds", [args.seed])
    if getattr(args, "out", None):
        config = with_override(config, "output_dir", args.out)
    if getattr(args, "steps", None) is not None:
        config = with_override(config, "total_steps", args.steps)
    return config


def _print_summary(summary) -> None:
    print(f"{summary.label}: max average return {summary.max_average_return:.4f} "
          f"+/- {summary.std:.4f} at step {summary.step} over {summary.n_seeds} seeds")


def cmd_train(args) -> int:
    config = _config(args)
    log = run_experiment(config)
    print(f"wrote {Path(config.output_dir) / 'log.csv'}")
    _print_summary(summarize(log))
    return 0


def cmd_eval(args) -> int:
    meta = read_meta(args.checkpoint)
    if meta.get("env") is None:
        raise CliError("CheckpointError", "checkpoint holds no environment name")
    env = make_env(meta["env"]["name"])
    agent = load_checkpoint(args.checkpoint)
    returns, psi_bar = evaluate(agent, env, args.episodes, args.seed_base)
    print(json.dumps({"episodes": args.episodes, "return_mean": float(np.mean(returns)),
                      "return_std": float(np.std(returns)), "mean_psi_bar": psi_bar,
                      "env_steps": agent.env_steps}))
    return 0


def cmd_plot(args) -> int:
    logs = [read_log(p) for p in args.log]
    emit_plot(logs, args.out, window=args.window)
    for log in logs:
        _print_summary(summarize(log))
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    results = run_all(args.instances, args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else EXIT_FAILURE


def cmd_sweep(args) -> int:
    base = _config(args)
    values = [parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("UsageError", "--values needs at least one entry", EXIT_USAGE)
    # validate every variant before training any of them
    variants = []
    for v in values:
        name = f"{args.param}={v}"
        variants.append(with_override(with_override(
            with_override(base, args.param, v), "output_dir", str(Path(base.output_dir) / name)), "label", name))
    for config in variants:
        _print_summary(summarize(run_experiment(config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bac", description="Actor-critic experiments with an autoencoder novelty bonus.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every configured seed and write the CSV log")
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int, help="run only this seed")
    t.add_argument("--out", help="output directory (overrides the config)")
    t.add_argument("--steps", type=int, help="total environment steps (overrides the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint with eval-mode actions")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--episodes", type=int, default=15)
    e.add_argument("--seed-base", type=int, default=0, help="environment seed of the first episode")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="plot one smoothed curve per log")
    pl.add_argument("--log", type=Path, nargs="+", required=True)
    pl.add_argument("--out", type=Path, required=True)
    pl.add_argument("--window", type=int, default=5)
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("verify", help="check the tabular operator on random MDPs")
    v.add_argument("--instances", type=int, default=60)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="train once per value of one setting")
    s.add_argument("--config", type=Path)
    s.add_argument("--param", required=True, help="dotted key, e.g. agent.alpha")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", help="parent output directory")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail("UsageError", "invalid command line", EXIT_USAGE)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), EXIT_USAGE)
    except (CheckpointError, FileNotFoundError, PermissionError, IsADirectoryError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
