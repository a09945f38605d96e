"""Command line entry point: ``robust-pmdpd {train,sweep,check}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .checks import run_checks
from .harness import ConfigError, ExperimentConfig, TrainingError, emit, run_training, sweep_from_config
from .uncertainty import ProjectionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("robust_pmdpd")


def _parser():
    p = argparse.ArgumentParser(prog="robust-pmdpd", description="Robust PMD-PD for tabular RCMDPs")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "run the training loop and write the run log"),
                        ("sweep", "train, then evaluate on the distortion sweep"),
                        ("check", "run the invariant suite on the configured instance")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="YAML experiment config (defaults apply if omitted)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--mode", choices=("exact", "sampled"), help="exact oracles or sample-based estimates")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = "exact_oracle" if args.mode == "exact" else "sample_based"
    if args.out is not None:
        cfg.output["dir"] = args.out
    return cfg


def _out_path(cfg, key):
    out_dir = cfg.output["dir"]
    if not os.path.isabs(out_dir) and cfg.base_dir != ".":
        out_dir = os.path.join(cfg.base_dir, out_dir)
    return os.path.join(out_dir, cfg.output[key])


def _train(cfg):
    policy, kernel, dual, run_log = run_training(cfg)
    path = _out_path(cfg, "run_log")
    emit(run_log, path)
    last = run_log.rows[-1]
    print(f"K={len(run_log.rows)} V={last[1]:.6g} lambda={np.array2string(dual.lam, precision=4)} -> {path}")
    return policy


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.command == "check":
            spec = cfg.build_spec()
            results = run_checks(spec, cfg.build_set(spec), seed=cfg.seed)
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}".rstrip())
            return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC
        policy = _train(cfg)
        if args.command == "sweep":
            table = sweep_from_config(cfg, policy)
            path = _out_path(cfg, "sweep")
            emit(table, path)
            print(f"{len(table.rows)} sweep rows -> {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, ProjectionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
