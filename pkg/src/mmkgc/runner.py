"""End-to-end experiment pipeline and grid sweeps.

``run_experiment`` wires the stages: load or synthesize data, drop a
fraction of visual features, complete them (adversarially or with a naive
baseline), train a link predictor on the completed store, and evaluate
with filtered ranking. Every artifact lands in the run directory and a
manifest records stage timings, input hashes, and outputs, so a finished
run is reproducible from its own snapshot.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import time
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .completer import build_completer, complete_features, naive_completion, save_completer, train_completer
from .config import ExperimentConfig, config_to_dict, resolve_config, save_config
from .errors import ConfigError
from .evaluation import evaluate, write_metrics_csv
from .kgc import save_kgc, train_kgc
from .numerics import derive_seed


def _hash_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


class _StageTimer:
    def __init__(self):
        self.stages = []
        self.current = "setup"

    def run(self, name: str, fn):
        self.current = name
        start = time.perf_counter()
        result = fn()
        self.stages.append({"name": name, "seconds": time.perf_counter() - start})
        return result


def run_experiment(config: ExperimentConfig, quiet: bool = False) -> Path:
    """Execute the full pipeline; returns the run directory."""
    torch.set_num_threads(1)
    config = resolve_config(config)
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(run_dir / "config.json", config)

    timer = _StageTimer()
    manifest = {
        "completion_mode": config.completion_mode,
        "scorer": config.scorer,
        "seed": config.seed,
        "artifacts": [],
        "input_hashes": {},
    }

    def add_artifact(path: Path) -> Path:
        manifest["artifacts"].append(path.name)
        return path

    def say(msg: str) -> None:
        if not quiet:
            print(msg)

    try:
        # Stage: data.
        def load():
            if config.data.source == "synth":
                return data_mod.synth_mmkg(
                    config.data.num_entities, config.data.num_relations,
                    config.data.num_triples, d_v=config.data.d_v,
                    noise_level=config.data.noise_level,
                    seed=derive_seed(config.seed, "data"))
            return data_mod.load_dataset(config.data.path)

        graph, full_store = timer.run("data", load)
        manifest["input_hashes"]["train"] = _hash_array(graph.train)
        manifest["input_hashes"]["valid"] = _hash_array(graph.valid)
        manifest["input_hashes"]["test"] = _hash_array(graph.test)
        manifest["input_hashes"]["features"] = _hash_array(full_store.features)
        say(f"data: {graph.num_entities} entities, {graph.num_relations} relations, "
            f"{len(graph.train)}/{len(graph.valid)}/{len(graph.test)} triples")

        # Stage: drop. Synthetic stores arrive complete; file-backed stores
        # may already have a mask, in which case the drop is skipped.
        def drop():
            if full_store.mask.all():
                return data_mod.drop_modality(
                    full_store, config.missing_rate, derive_seed(config.seed, "drop"))
            return full_store

        observed = timer.run("drop", drop)
        pre_mask = observed.mask.copy()
        if config.data.source == "synth":
            data_mod.save_dataset(run_dir / "data", graph, observed)
            manifest["artifacts"].append("data")
        say(f"drop: {len(observed.missing_ids)} of {graph.num_entities} entities missing")

        # Stage: completion.
        def complete():
            if config.completion_mode in ("random", "one"):
                mode = config.completion_mode
                completed = naive_completion(
                    observed, mode, seed=derive_seed(config.seed, "naive"))
                return completed, {"strategy": mode, "seed": config.seed}
            state = build_completer(graph, observed.dim, config.completer)
            history = train_completer(graph, observed, state, config.completer)
            save_completer(add_artifact(run_dir / "completer.ckpt"), state, config.completer)
            (run_dir / "completer_history.json").write_text(
                json.dumps(history, sort_keys=True) + "\n", encoding="utf-8")
            manifest["artifacts"].append("completer_history.json")
            completed, info = complete_features(graph, observed, state, config.completer)
            info["accepted"] = {graph.entity_names[i]: c
                                for i, c in sorted(info["accepted"].items())}
            return completed, info

        completed, completion_info = timer.run("complete", complete)
        data_mod.save_features(
            add_artifact(run_dir / "completed_features.txt"), completed, graph.entity_names)
        (run_dir / "completion.json").write_text(
            json.dumps(completion_info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifest["artifacts"].append("completion.json")
        say(f"complete: mode={config.completion_mode}")

        # Stage: link-predictor training.
        def fit():
            return train_kgc(graph, completed, config.kgc, config.scorer)

        model, kgc_history = timer.run("train_kgc", fit)
        save_kgc(add_artifact(run_dir / "kgc.ckpt"), model, config.kgc)
        (run_dir / "kgc_history.json").write_text(
            json.dumps(kgc_history, sort_keys=True) + "\n", encoding="utf-8")
        manifest["artifacts"].append("kgc_history.json")
        say(f"train_kgc: scorer={config.scorer}, "
            f"final loss={kgc_history['loss'][-1] if kgc_history['loss'] else float('nan'):.4f}")

        # Stage: evaluation.
        def score():
            known = graph.known_triples if config.filter_mode == "full" else graph.train_set
            return evaluate(model, graph.test, known, pre_mask)

        report = timer.run("evaluate", score)
        (add_artifact(run_dir / "report.json")).write_text(
            report.to_json() + "\n", encoding="utf-8")
        write_metrics_csv(add_artifact(run_dir / "metrics.csv"), report)
        m = report.metrics("all")
        say(f"evaluate: mrr={m['mrr']:.4f} hits@10={m['hits@10']:.4f} over {m['count']} queries")
    except Exception as exc:
        manifest["failed_stage"] = timer.current
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["stages"] = timer.stages
        (run_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        raise

    manifest["stages"] = timer.stages
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return run_dir


def sweep(base_config: ExperimentConfig, grid: dict, output_dir, quiet: bool = False) -> Path:
    """Cartesian-product sweep over dotted config paths.

    Each cell runs in ``output_dir/cell_###`` with a seed derived from the
    base seed and the cell index; ``sweep.csv`` tabulates the grid values
    with headline metrics.
    """
    if not grid:
        raise ConfigError("sweep grid must name at least one parameter")
    for key, values in grid.items():
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid entry {key!r} must be a non-empty list")

    from .config import apply_overrides, config_from_dict

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    rows = []
    for idx, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        cell = config_from_dict(config_to_dict(base_config))
        overrides = [f"{k}={json.dumps(v)}" for k, v in zip(keys, combo)]
        apply_overrides(cell, overrides)
        cell.seed = derive_seed(base_config.seed, "sweep", idx)
        cell.completer.seed = None
        cell.kgc.seed = None
        cell.output_dir = str(output_dir / f"cell_{idx:03d}")
        run_dir = run_experiment(cell, quiet=quiet)
        report_metrics = json.loads((run_dir / "report.json").read_text())["metrics"]["all"]
        row = dict(zip(keys, combo))
        row["cell"] = f"cell_{idx:03d}"
        row["mrr"] = report_metrics["mrr"]
        for k in (1, 3, 10):
            row[f"hits@{k}"] = report_metrics[f"hits@{k}"]
        rows.append(row)

    import csv

    with open(output_dir / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=["cell", *keys, "mrr", "hits@1", "hits@3", "hits@10"],
            lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})
    return output_dir
