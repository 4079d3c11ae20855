"""Command-line entry point: ``counterdyna run|ablate|eval-csm|report``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench.evaluation import evaluate_csm
from .bench.suite import aggregate, run_ablations, run_suite
from .config import ExperimentConfig, load_config
from .dyna import ExperienceStore
from .errors import ConfigError
from .surrogate import BuildingModel, RewardModel

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {raw!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("--seeds must list distinct integers")
    return seeds


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "fast", False) or cfg.experiment.fast:
        cfg = cfg.with_fast()
    if getattr(args, "seeds", None):
        cfg.experiment = dataclasses.replace(cfg.experiment, seeds=_parse_seeds(args.seeds))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_suite(cfg, args.out)
    print(json.dumps({k: report[k] for k in ("n_runs", "best_runs", "savings")}, indent=1, sort_keys=True))
    for f in report["failures"]:
        print(f"run {f['run_id']} failed: {f['error']}", file=sys.stderr)
    return EXIT_RUN if report["failures"] else EXIT_OK


def cmd_ablate(args) -> int:
    args.config = args.grid
    cfg = _load(args)
    report = run_ablations(cfg, args.out, reuse_from=args.reuse)
    print(f"{report['n_configurations']} configurations, {report['n_runs']} runs "
          f"({report['n_unique_runs']} unique, {report['n_reused_runs']} reused)")
    for f in report["failures"]:
        print(f"run {f['run_id']} failed: {f['error']}", file=sys.stderr)
    return EXIT_RUN if report["failures"] else EXIT_OK


def cmd_eval_csm(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = ckpt / "config.ini"
    cfg = load_config(cfg_path) if cfg_path.exists() else ExperimentConfig()
    for name in ("building_model.npz", "reward_model.json", "d_env.npz"):
        if not (ckpt / name).exists():
            raise FileNotFoundError(f"{ckpt / name} missing; eval-csm needs a Counter-Dyna checkpoint")
    bm = BuildingModel.load(ckpt / "building_model.npz")
    rm = RewardModel.from_json((ckpt / "reward_model.json").read_text())
    store = ExperienceStore.load_env(ckpt / "d_env.npz")
    report = evaluate_csm(bm, rm, store.env_episodes, cfg.env_config(), horizon=args.horizon,
                          n_segments=args.segments, rng=np.random.default_rng(args.seed))
    out = Path(args.out) if args.out else ckpt / "csm_eval.csv"
    report.write_csv(out)
    print(json.dumps(report.summary(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    report = aggregate(args.out)
    (Path(args.out) / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps({k: report[k] for k in ("n_runs", "best_runs", "savings")}, indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="counterdyna", description="Counter-Dyna heat-pump control experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="headline experiments and baselines")
    r.add_argument("--config", default=None)
    r.add_argument("--fast", action="store_true", help="two hidden layers of 64 units")
    r.add_argument("--seeds", default=None, help="comma-separated seeds, e.g. 0,1,2")
    r.add_argument("--out", default="results")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="synthetic-ratio, rollout-length and cost-weight sweeps")
    a.add_argument("--grid", default=None, help="config file whose [ablation] section defines the grid")
    a.add_argument("--fast", action="store_true")
    a.add_argument("--out", default="results_ablation")
    a.add_argument("--reuse", action="append", default=[], metavar="DIR",
                   help="suite output directory whose finished runs may fill matching cells")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval-csm", help="in/out-of-sample accuracy of a saved building model")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--horizon", type=int, default=24)
    e.add_argument("--segments", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval_csm)

    rep = sub.add_parser("report", help="rebuild aggregate CSVs from per-run outputs")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
