"""Command-line interface.

Subcommands cover each pipeline stage plus the orchestrated whole:

  prepare          synthesize or load a dataset and drop features
  train-completer  adversarial training on a prepared dataset
  complete         impute missing features from a completer checkpoint
  train-kgc        fit a link predictor on completed features
  evaluate         filtered ranking metrics for a kgc checkpoint
  compare          rank-bucket matrix between two evaluation reports
  run              full pipeline in one run directory
  sweep            grid sweep over config fields

Configuration flows config file < --set overrides < convenience flags.
Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as data_mod
from .completer import (build_completer, complete_features, load_completer,
                        save_completer, train_completer)
from .config import (COMPLETION_MODES, FILTER_MODES, ExperimentConfig,
                     apply_overrides, load_config, resolve_config, save_config)
from .errors import ConfigError, DataError, NumericalError
from .evaluation import EvalReport, bucket_compare, evaluate, write_bucket_csv, write_metrics_csv
from .kgc import SCORERS, load_kgc, save_kgc, train_kgc
from .numerics import derive_seed
from .runner import run_experiment, sweep


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so bad flags map to exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config field (repeatable)")
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--missing-rate", type=float, help="fraction of entities to drop")
    p.add_argument("--completion-mode", choices=COMPLETION_MODES)
    p.add_argument("--scorer", choices=SCORERS)
    p.add_argument("--filter-mode", choices=FILTER_MODES)
    p.add_argument("-o", "--output-dir", help="run directory")


def _build_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    apply_overrides(config, args.overrides)
    for attr, key in (("seed", "seed"), ("missing_rate", "missing_rate"),
                      ("completion_mode", "completion_mode"), ("scorer", "scorer"),
                      ("filter_mode", "filter_mode"), ("output_dir", "output_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, key, value)
    return config


def _load_prepared(path) -> tuple:
    graph, store = data_mod.load_dataset(path)
    return graph, store


def cmd_prepare(args) -> int:
    config = resolve_config(_build_config(args))
    out = Path(config.output_dir)
    if config.data.source == "synth":
        graph, store = data_mod.synth_mmkg(
            config.data.num_entities, config.data.num_relations,
            config.data.num_triples, d_v=config.data.d_v,
            noise_level=config.data.noise_level,
            seed=derive_seed(config.seed, "data"))
    else:
        graph, store = data_mod.load_dataset(config.data.path)
    if store.mask.all():
        store = data_mod.drop_modality(store, config.missing_rate,
                                       derive_seed(config.seed, "drop"))
    data_mod.save_dataset(out, graph, store)
    print(f"prepared {graph.num_entities} entities, "
          f"{len(store.missing_ids)} missing, in {out}")
    return 0


def cmd_train_completer(args) -> int:
    config = resolve_config(_build_config(args))
    graph, store = _load_prepared(args.data)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = build_completer(graph, store.dim, config.completer)
    history = train_completer(graph, store, state, config.completer)
    save_completer(out / "completer.ckpt", state, config.completer)
    (out / "completer_history.json").write_text(
        json.dumps(history, sort_keys=True) + "\n", encoding="utf-8")
    final = history["d_loss"][-1] if history["d_loss"] else float("nan")
    print(f"trained completer for {config.completer.epochs} epochs "
          f"(final d_loss {final:.4f}); checkpoint in {out}")
    return 0


def cmd_complete(args) -> int:
    config = _build_config(args)
    graph, store = _load_prepared(args.data)
    state, ckpt_config = load_completer(args.checkpoint, graph, store.dim)
    if config.completion_mode == "maco_all_gen":
        ckpt_config.strategy = "all_gen"
    elif config.completion_mode == "maco_gen":
        ckpt_config.strategy = "gen"
    elif config.completion_mode in ("random", "one"):
        raise ConfigError("complete works with generator checkpoints; "
                          "use `run --completion-mode random|one` for baselines")
    if args.seed is not None:
        ckpt_config.seed = args.seed
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    completed, info = complete_features(graph, store, state, ckpt_config)
    info["accepted"] = {graph.entity_names[i]: c for i, c in sorted(info["accepted"].items())}
    data_mod.save_features(out / "completed_features.txt", completed, graph.entity_names)
    (out / "completion.json").write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"completed {len(info['accepted'])} entities "
          f"(strategy {ckpt_config.strategy}) into {out}")
    return 0


def cmd_train_kgc(args) -> int:
    config = resolve_config(_build_config(args))
    graph, _ = _load_prepared(args.data)
    store = data_mod.load_features(args.features, graph.entity_names)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, history = train_kgc(graph, store, config.kgc, config.scorer)
    save_kgc(out / "kgc.ckpt", model, config.kgc)
    (out / "kgc_history.json").write_text(
        json.dumps(history, sort_keys=True) + "\n", encoding="utf-8")
    final = history["loss"][-1] if history["loss"] else float("nan")
    print(f"trained {config.scorer} for {config.kgc.epochs} epochs "
          f"(final loss {final:.4f}); checkpoint in {out}")
    return 0


def cmd_evaluate(args) -> int:
    config = _build_config(args)
    graph, store = _load_prepared(args.data)
    model, _ = load_kgc(args.checkpoint)
    if model.struct_emb.shape[0] != graph.num_entities:
        raise DataError("checkpoint entity count does not match dataset")
    known = graph.known_triples if config.filter_mode == "full" else graph.train_set
    report = evaluate(model, graph.test, known, store.mask)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    write_metrics_csv(out / "metrics.csv", report)
    m = report.metrics("all")
    print(f"mrr={m['mrr']:.4f} hits@1={m['hits@1']:.4f} "
          f"hits@3={m['hits@3']:.4f} hits@10={m['hits@10']:.4f} ({m['count']} queries)")
    return 0


def cmd_compare(args) -> int:
    reports = []
    for path in (args.report_a, args.report_b):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
        reports.append(EvalReport.from_json(text))
    try:
        matrices = bucket_compare(reports[0], reports[1])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.output) if args.output else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_bucket_csv(out, matrices)
        print(f"bucket matrix written to {out}")
    diag = sum(matrices["all"][i][i] for i in range(len(matrices["all"])))
    above = sum(matrices["all"][i][j] for i in range(6) for j in range(6) if j < i)
    below = sum(matrices["all"][i][j] for i in range(6) for j in range(6) if j > i)
    print(f"all queries: {diag} same bucket, {above} improved in B, {below} worse in B")
    return 0


def cmd_run(args) -> int:
    config = _build_config(args)
    run_dir = run_experiment(config, quiet=args.quiet)
    print(f"run complete: {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    config = _build_config(args)
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--grid must be a JSON object: {exc}") from exc
    if not isinstance(grid, dict):
        raise ConfigError("--grid must be a JSON object mapping config paths to value lists")
    out = sweep(config, grid, config.output_dir, quiet=args.quiet)
    print(f"sweep complete: {out / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmkgc",
                     description="adversarial feature completion for multimodal KGC")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="synthesize/load a dataset and drop features")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train-completer", help="train the adversarial completer")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train_completer)

    p = sub.add_parser("complete", help="impute features from a completer checkpoint")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--checkpoint", required=True, help="completer checkpoint")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("train-kgc", help="train a link predictor")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--features", required=True, help="completed feature file")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train_kgc)

    p = sub.add_parser("evaluate", help="filtered ranking metrics")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--checkpoint", required=True, help="kgc checkpoint")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compare", help="bucket matrix between two reports")
    p.add_argument("report_a", help="baseline report.json")
    p.add_argument("report_b", help="comparison report.json")
    p.add_argument("-o", "--output", help="bucket CSV path")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("run", help="full pipeline")
    _add_config_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="grid sweep")
    _add_config_flags(p)
    p.add_argument("--grid", required=True,
                   help='JSON object, e.g. \'{"completer.tau": [0.5, 1, 2]}\'')
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
