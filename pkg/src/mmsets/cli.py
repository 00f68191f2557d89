"""Command-line entry points: generate data, train, evaluate.

Configuration precedence is flags > config file > defaults, with the env
var MMSETS_SEED as a seed fallback. Every run writes its fully resolved
config next to its artifacts inside an output directory named by the config
hash, so identical runs land in the same place with identical bytes (only
the log header carries a timestamp).

Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 numeric runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticConfig, generate_synthetic, load_dataset_dir, save_dataset
from .errors import ConfigError, DataError, NumericError
from .evaluate import evaluate_model, run_kfold
from .fusion import ConcatModel, FusionModel, aggregate_importance
from .metrics import EvalReport, export_fim
from .tensor import POOL_MODES
from .training import TrainConfig, train

GEN_DEFAULTS = {
    "num_modalities": 4,
    "feature_dims": None,
    "min_instances": 1,
    "max_instances": 3,
    "informative_modality": "m0",
    "missing_rates": 0.0,
    "noise_scale": 0.25,
    "num_classes": 2,
    "num_samples": 1000,
    "seed": None,
    "task": "single_label",
}

MODEL_DEFAULTS = {
    "pool": "max",
    "dim": 32,
    "predictor_hidden": [32],
    "embed_dim": 16,
    "num_filters": 16,
    "kernel_widths": [2, 3, 4],
    "dropout_p": 0.25,
    "class_prior": 0.01,
    "baseline": None,
    "modalities": None,
}

TRAIN_DEFAULTS = {
    "epochs": 25,
    "batch_size": 32,
    "peak_lr": 0.001,
    "warmup_epochs": 5,
    "min_lr": 0.0,
    "weight_decay": 0.01,
    "class_weighting": False,
    "seed": None,
}

EVAL_DEFAULTS = {"kfold": 0, "importance": False, "checkpoint": None}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _read_config_file(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def _resolve(defaults: dict, file_cfg: dict, flag_cfg: dict) -> dict:
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        if key not in defaults:
            raise ConfigError(f"unknown config field {key!r}")
        resolved[key] = value
    for key, value in flag_cfg.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _resolve_seed(resolved: dict) -> None:
    if resolved.get("seed") is None:
        env = os.environ.get("MMSETS_SEED")
        resolved["seed"] = int(env) if env is not None else 0


def config_hash(resolved: dict) -> str:
    text = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _run_dir(resolved: dict, out) -> Path:
    run_dir = Path(out) / config_hash(resolved)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    return run_dir


def _log_writer(path: Path):
    fh = open(path, "w")
    fh.write(json.dumps({"event": "start", "timestamp": time.time()}) + "\n")

    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()

    return fh, write


def _select_specs(manifest, resolved: dict):
    wanted = resolved["modalities"]
    if wanted is None:
        return manifest.modalities
    if isinstance(wanted, str):
        wanted = [m.strip() for m in wanted.split(",") if m.strip()]
    known = {s.modality_id for s in manifest.modalities}
    unknown = sorted(set(wanted) - known)
    if unknown:
        raise ConfigError(f"modalities not in the dataset manifest: {unknown}")
    if not wanted:
        raise ConfigError("modalities must name at least one modality")
    return [s for s in manifest.modalities if s.modality_id in set(wanted)]


def _build_model(manifest, resolved: dict, seed: int):
    specs = _select_specs(manifest, resolved)
    kwargs = dict(num_classes=manifest.num_classes, dim=resolved["dim"],
                  predictor_hidden=tuple(resolved["predictor_hidden"]),
                  embed_dim=resolved["embed_dim"], num_filters=resolved["num_filters"],
                  kernel_widths=tuple(resolved["kernel_widths"]),
                  dropout_p=resolved["dropout_p"], class_prior=resolved["class_prior"],
                  seed=seed)
    if resolved["baseline"] == "concat":
        return ConcatModel(specs, **kwargs)
    return FusionModel(specs, pool=resolved["pool"], **kwargs)


def _train_config(resolved: dict) -> TrainConfig:
    try:
        return TrainConfig(epochs=resolved["epochs"], batch_size=resolved["batch_size"],
                           peak_lr=resolved["peak_lr"],
                           warmup_epochs=resolved["warmup_epochs"],
                           min_lr=resolved["min_lr"],
                           weight_decay=resolved["weight_decay"],
                           class_weighting=resolved["class_weighting"],
                           seed=resolved["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_gen_synthetic(args) -> int:
    file_cfg = _read_config_file(args.config) if args.config else {}
    flag_cfg = {"num_samples": args.samples, "num_classes": args.classes,
                "num_modalities": args.modalities, "seed": args.seed,
                "task": args.task}
    resolved = _resolve(GEN_DEFAULTS, file_cfg, flag_cfg)
    _resolve_seed(resolved)
    try:
        cfg = SyntheticConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                                 for k, v in resolved.items()})
    except ValueError as exc:
        raise ConfigError(str(exc))
    run_dir = _run_dir(resolved, args.out)
    manifest, samples = generate_synthetic(cfg)
    save_dataset(manifest, samples, run_dir)
    print(f"wrote {manifest.sample_count} samples to {run_dir}")
    return 0


def _load_data(args):
    if not args.data:
        raise ConfigError("--data is required")
    return load_dataset_dir(args.data)


def _model_flags(args) -> dict:
    return {"pool": args.pool, "dim": args.dim, "baseline": args.baseline,
            "modalities": args.modalities}


def cmd_train(args) -> int:
    manifest, samples = _load_data(args)
    file_cfg = _read_config_file(args.config) if args.config else {}
    flag_cfg = {**_model_flags(args), "epochs": args.epochs, "seed": args.seed,
                "batch_size": args.batch_size, "warmup_epochs": args.warmup_epochs}
    resolved = _resolve({**MODEL_DEFAULTS, **TRAIN_DEFAULTS}, file_cfg, flag_cfg)
    _resolve_seed(resolved)
    resolved["data"] = str(args.data)
    resolved["command"] = "train"
    run_dir = _run_dir(resolved, args.out)

    model = _build_model(manifest, resolved, resolved["seed"])
    fh, write = _log_writer(run_dir / "train_log.jsonl")
    try:
        train(model, samples, _train_config(resolved), task=manifest.task,
              on_epoch=write)
    finally:
        fh.close()
    save_checkpoint(model, run_dir / "checkpoint.json", config_hash(resolved))
    print(f"checkpoint written to {run_dir / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    manifest, samples = _load_data(args)
    file_cfg = _read_config_file(args.config) if args.config else {}
    flag_cfg = {**_model_flags(args), "epochs": args.epochs, "seed": args.seed,
                "batch_size": args.batch_size, "warmup_epochs": args.warmup_epochs,
                "kfold": args.kfold, "importance": args.importance or None,
                "checkpoint": args.checkpoint}
    resolved = _resolve({**MODEL_DEFAULTS, **TRAIN_DEFAULTS, **EVAL_DEFAULTS},
                        file_cfg, flag_cfg)
    _resolve_seed(resolved)
    resolved["data"] = str(args.data)
    resolved["command"] = "eval"

    if resolved["importance"]:
        if resolved["baseline"] == "concat":
            raise ConfigError("--importance is not defined for the concat baseline")
        if resolved["pool"] not in ("max", "min"):
            raise ConfigError(
                f"--importance needs max or min pooling, got {resolved['pool']!r}")

    run_dir = _run_dir(resolved, args.out)
    records = []
    if resolved["kfold"]:
        def factory(fold_index):
            return _build_model(manifest, resolved, resolved["seed"] + 1000 * fold_index)

        report, records = run_kfold(samples, manifest.task, factory,
                                    _train_config(resolved), k=resolved["kfold"],
                                    seed=resolved["seed"],
                                    collect_importance=resolved["importance"])
        tag = f"{'concat' if resolved['baseline'] else resolved['pool']}_D{resolved['dim']}"
    else:
        if not resolved["checkpoint"]:
            raise ConfigError("eval needs --kfold K or --checkpoint PATH")
        model, _ = load_checkpoint(resolved["checkpoint"])
        metrics, records, _ = evaluate_model(model, samples, manifest.task)
        metrics["fold"] = 0
        fim = None
        if resolved["importance"]:
            if not records:
                raise ConfigError("--importance needs a max or min pooling checkpoint")
            fim = aggregate_importance(records)
        report = EvalReport(task=manifest.task, num_folds=1, folds=[metrics],
                            mean={k: v for k, v in metrics.items() if k != "fold"},
                            fim=fim)
        tag = f"{getattr(model, 'pool', 'concat')}_D{model.dim}"

    (run_dir / "report.json").write_text(report.to_json())
    if resolved["importance"] and report.fim is not None:
        export_fim([(tag, report.fim)], run_dir / "fim.csv")
        with open(run_dir / "importance_records.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps({"sample_id": rec.sample_id, "counts": rec.counts,
                                     "fractions": rec.fractions}, sort_keys=True) + "\n")
    print(f"report written to {run_dir / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmsets",
                     description="Multi-modal set fusion: generate, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="generate a synthetic dataset")
    gen.add_argument("--config", help="JSON file with generator settings")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--samples", type=int)
    gen.add_argument("--classes", type=int)
    gen.add_argument("--modalities", type=int)
    gen.add_argument("--task", choices=["single_label", "multi_label"])
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_gen_synthetic)

    def add_common(p):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--pool", choices=list(POOL_MODES))
        p.add_argument("--dim", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--warmup-epochs", type=int, dest="warmup_epochs")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--seed", type=int)
        p.add_argument("--baseline", choices=["concat"])
        p.add_argument("--modalities",
                       help="comma-separated subset of manifest modalities")

    tr = sub.add_parser("train", help="train a model and write a checkpoint")
    add_common(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate via k-fold or a checkpoint")
    add_common(ev)
    ev.add_argument("--kfold", type=int, help="number of folds to train/evaluate")
    ev.add_argument("--importance", action="store_true",
                    help="emit per-sample importance records and the aggregated matrix")
    ev.add_argument("--checkpoint", help="evaluate an existing checkpoint")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
