"""Command-line entry point: ``stacked-pinn {simulate,train,evaluate,sweep}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import experiment
from .autodiff import DivergenceError
from .experiment import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults if omitted)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--n", type=int, help="number of residual blocks")
    common.add_argument("--seed", type=int, help="training seed")
    common.add_argument("--iters", type=int, help="override train.max_iters")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="stacked-pinn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the Godunov reference and sample measurements")
    sub.add_parser("train", parents=[common], help="train one model")
    sub.add_parser("evaluate", parents=[common], help="re-score a saved checkpoint")
    sub.add_parser("sweep", parents=[common], help="train every (n, seed) cell")
    return p


def _resolve(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.iters is not None:
        if args.iters < 0:
            raise ConfigError("--iters must be non-negative")
        cfg.train = dataclasses.replace(cfg.train, max_iters=args.iters)
    if args.n is not None and args.n < 0:
        raise ConfigError("--n must be non-negative")
    return cfg


def _print_cell(res: experiment.CellResult) -> None:
    print(f"n={res.n} seed={res.seed} stop={res.history.stop_reason}@{res.history.stop_iteration}")
    print(res.report.as_text(), end="")
    for i, e in res.stages:
        print(f"stage{i}_relative_l2 = {e!r}")


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        n = cfg.train.n_blocks if args.n is None else args.n
        seed = cfg.seeds[0] if args.seed is None else args.seed
        if args.command == "simulate":
            field_, data = experiment.simulate(cfg)
            if not args.quiet:
                g = field_.grid
                print(f"nx={g.nx} nt={field_.nt} L={g.length_L} T={g.time_T} "
                      f"dx={g.dx:.6g} dt={field_.dt:.6g} measurements={len(data)} -> {cfg.out_dir}")
        elif args.command == "train":
            field_, data = experiment.load_inputs(cfg)
            res = experiment.train_cell(cfg, field_, data, n, seed)
            if not args.quiet:
                _print_cell(res)
        elif args.command == "evaluate":
            res = experiment.evaluate_checkpoint(cfg, n, seed)
            if not args.quiet:
                _print_cell(res)
        elif args.command == "sweep":
            if args.n is not None:
                cfg.sweep = [args.n]
            if args.seed is not None:
                cfg.seeds = [args.seed]
            results = experiment.sweep(cfg)
            if not args.quiet:
                print("n,seed,relative_l2,stop_iteration")
                for r in results:
                    print(f"{r.n},{r.seed},{r.report.relative_l2:.6g},{r.history.stop_iteration}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
