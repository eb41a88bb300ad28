"""Command line interface.

Subcommands:
    run         optimize per a config file, writing artifacts as it goes
    resume      continue an interrupted run from its checkpoint
    report      regenerate report.txt / report.csv from run artifacts
    rules       mine pipeline-choice association rules from a run's history
    meta-fit    distill a finished run into a transferable prior record
    calibrate   blend repository records into a prior for a new dataset
    bench       run the built-in synthetic benchmark suite
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import yaml

from . import bench as benchmod
from . import metalearn, persist, rules
from .space import SpaceError


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_features(path: str) -> metalearn.MetaFeatureVector:
    if not os.path.isfile(path):
        raise persist.ConfigError(f"features file not found: {path}")
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise persist.ConfigError(f"features file is not parseable: {e}")
    if not isinstance(raw, dict) or not raw:
        raise persist.ConfigError(
            "features file must hold a non-empty mapping of name to value")
    try:
        return metalearn.MetaFeatureVector(
            {str(k): float(v) for k, v in raw.items()})
    except (TypeError, ValueError) as e:
        raise persist.ConfigError(f"features file is invalid: {e}")


# -- subcommands -----------------------------------------------------------------

def cmd_run(args) -> int:
    config = persist.load_run_config(args.config)
    state = persist.execute_run(config, overwrite=args.force,
                                max_seconds=args.max_seconds)
    if state.incumbent is not None:
        config_, score = state.incumbent
        print(f"best score {score:.6f} after {len(state.records)} evaluations")
    print(f"artifacts in {config.artifacts_dir}")
    if not state.finalized:
        print("run stopped before exhausting its budget; resume to continue")
    return 0


def cmd_resume(args) -> int:
    config = persist.load_run_config(args.config)
    before = persist.load_checkpoint(
        os.path.join(config.artifacts_dir, persist.CHECKPOINT_FILE))
    state = persist.resume_run(config, max_seconds=args.max_seconds)
    done = len(state.records)
    fresh = done - len(before["records"])
    if fresh == 0:
        print("nothing to do: the run is already complete")
    else:
        print(f"resumed at {len(before['records'])} evaluations, "
              f"now at {done}")
    if not state.finalized:
        print("run stopped before exhausting its budget; resume to continue")
    return 0


def cmd_report(args) -> int:
    persist.write_report(args.artifacts)
    with open(os.path.join(args.artifacts, persist.REPORT_TEXT_FILE)) as f:
        sys.stdout.write(f.read())
    return 0


def _history_feature_matrix(records):
    """Per-evaluation features: one 0/1 column per (stage, algorithm) plus
    one numeric column per hyperparameter (NaN when its algorithm is off)."""
    stages: dict[str, list[str]] = {}
    hp_names: list[tuple[str, str]] = []
    for rec in records:
        config = rec.request.config
        for stage, algo in config.choice.items():
            stages.setdefault(stage, [])
            if algo not in stages[stage]:
                stages[stage].append(algo)
        for algo, values in config.values.items():
            for name in values:
                if (algo, name) not in hp_names:
                    hp_names.append((algo, name))

    names, categorical = [], []
    for stage in sorted(stages):
        for algo in sorted(stages[stage]):
            categorical.append(len(names))
            names.append(f"{stage}={algo}")
    hp_cols = {}
    for algo, hp in sorted(hp_names):
        hp_cols[(algo, hp)] = len(names)
        names.append(f"{algo}.{hp}")

    X = np.full((len(records), len(names)), np.nan)
    col = {name: j for j, name in enumerate(names)}
    for i, rec in enumerate(records):
        config = rec.request.config
        for stage in stages:
            for algo in stages[stage]:
                X[i, col[f"{stage}={algo}"]] = float(config.choice.get(stage) == algo)
        for algo, values in config.values.items():
            for name, value in values.items():
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    X[i, hp_cols[(algo, name)]] = float(value)
    return X, names, categorical


def cmd_rules(args) -> int:
    records = persist.read_history(args.artifacts)
    if not records:
        return _fail("history log is empty", 1)
    X, names, categorical = _history_feature_matrix(records)
    scores = np.array([rec.score for rec in records])
    strata = rules.RiskStrata.tertiles(scores)
    labels = rules.stratify(scores, strata)
    mined = rules.mine_rules(
        X, labels, min_support=args.min_support, max_len=args.max_len,
        top_k=args.top_k, bins=args.bins, feature_names=names,
        categorical=categorical,
        min_posterior_confidence=args.min_confidence)
    text = rules.format_rules(mined)
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "rules.txt"), "w") as f:
            f.write(text)
        with open(os.path.join(args.out, "rules.jsonl"), "w") as f:
            for rule in mined:
                f.write(persist.canonical_json(rules.rule_record(rule)) + "\n")
        print(f"written to {args.out}", file=sys.stderr)
    return 0


def cmd_meta_fit(args) -> int:
    config = persist.load_run_config(args.config)
    payload = persist.load_checkpoint(
        os.path.join(config.artifacts_dir, persist.CHECKPOINT_FILE))
    space = persist.load_space_file(config.space_path)
    state = persist.state_from_checkpoint(payload, space)
    meta = _load_features(args.features)
    record = metalearn.fit_record(state, args.dataset_id, meta)
    path = persist.write_repository_record(record, args.repository)
    print(f"prior record for {args.dataset_id!r} written to {path}")
    return 0


def cmd_calibrate(args) -> int:
    repository = persist.read_repository(args.repository)
    meta = _load_features(args.features)
    prior = metalearn.calibrate(meta, repository, mode=args.mode,
                                temperature=args.temperature)
    payload = persist.calibrated_to_dict(prior)
    if args.out:
        with open(args.out, "w") as f:
            f.write(persist.canonical_json(payload) + "\n")
        print(f"calibrated prior written to {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    seeds = range(args.seeds)
    runs = benchmod.recovery_suite(seeds, budget=args.budget,
                                   batch_size=args.batch_size)
    efficiency = None
    if not args.skip_efficiency:
        efficiency = benchmod.efficiency_summary(runs)
    text = benchmod.format_suite(runs, efficiency)
    sys.stdout.write(text)
    passing = sum(r.ari >= 0.8 for r in runs)
    ok = passing >= max(1, round(0.8 * args.seeds))
    if efficiency is not None:
        ok = ok and (efficiency["optimizer_median"]
                     <= 0.5 * efficiency["random_median"])
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structbo",
        description="Batched Bayesian optimization over ML pipeline spaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize per a config file")
    p.add_argument("--config", required=True, help="run configuration (YAML)")
    p.add_argument("--force", action="store_true",
                   help="overwrite artifacts from a previous run")
    p.add_argument("--max-seconds", type=float, default=None,
                   help="stop after this much wall-clock time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("--config", required=True, help="run configuration (YAML)")
    p.add_argument("--max-seconds", type=float, default=None)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("report", help="regenerate the report from artifacts")
    p.add_argument("--artifacts", required=True, help="run artifact directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rules", help="mine association rules from a run history")
    p.add_argument("--artifacts", required=True, help="run artifact directory")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--min-support", type=int, default=10)
    p.add_argument("--max-len", type=int, default=2)
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--min-confidence", type=float, default=0.95)
    p.add_argument("--out", default=None,
                   help="directory for rules.txt and rules.jsonl")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("meta-fit",
                       help="distill a finished run into a prior record")
    p.add_argument("--config", required=True, help="run configuration (YAML)")
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--features", required=True,
                   help="YAML mapping of meta-feature name to value")
    p.add_argument("--repository", required=True,
                   help="directory of prior records")
    p.set_defaults(func=cmd_meta_fit)

    p = sub.add_parser("calibrate",
                       help="blend repository records into a prior")
    p.add_argument("--repository", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--mode", default="similarity",
                   choices=("similarity", "distance_proportional"))
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", default=None, help="write the prior as JSON here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="run the built-in benchmark suite")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--budget", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=5)
    p.add_argument("--skip-efficiency", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except persist.ConfigError as e:
        return _fail(str(e), 2)
    except (persist.IntegrityError, metalearn.MetaLearnError, rules.RulesError,
            SpaceError, ValueError) as e:
        return _fail(str(e), 1)


if __name__ == "__main__":
    sys.exit(main())
