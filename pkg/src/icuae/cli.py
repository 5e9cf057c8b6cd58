"""Command-line surface: generate, prepare, train, eval, reconstruct, embed.

Every command that emits report CSVs first writes a JSON run manifest
describing its inputs and configuration; the SHA-256 of that manifest is
stamped into each CSV as a leading ``# manifest_hash=`` comment so outputs
can be traced back to the exact invocation. Report commands also render
PNG figures next to the CSVs unless ``--no-figures`` is given.

Exit codes: 0 success, 2 usage/configuration error, 3 data error,
4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dense import DenseAutoencoder, dense_embed, dense_forward, embedding_dim, init_dense
from .errors import ConfigError, DataError, NumericError
from .figures import (
    render_grouped_bars,
    render_history,
    render_reconstruction_grid,
)
from .lstm import SeqAutoencoder, SeqBatch, encode, init_seq, seq_reconstruct
from .pipeline import (
    CARE_UNITS,
    NUM_FEATURES,
    SPLIT_NAMES,
    PreparedSplit,
    load_manifest,
    load_split,
    prepare_dataset,
    save_dataset,
)
from .synthetic import generate_synthetic_cohort
from .training import (
    Optimizer,
    TrainConfig,
    WindowSet,
    evaluate_mse,
    train,
    write_history_csv,
)

MODEL_KINDS = ("dense1", "dense2", "seq")
INTERVAL_CHOICES = (4, 16, 32, 64)

# Figure 3 compares care units at one interval; prefer the published one.
FIGURE3_INTERVAL = 32


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("none", "") else float(text)


# Per-command converters for --config keys. Keys mirror the flag names
# with dashes replaced by underscores; config values override flags.
_CONFIG_KEYS: Dict[str, Dict[str, object]] = {
    "generate": {"patients": int, "seed": int, "out": str},
    "prepare": {"events": str, "stays": str, "schema": str, "interval": int,
                "seed": int, "care_unit": str, "fill": str, "out": str},
    "train": {"dataset": str, "model": str, "interval": int, "seed": int,
              "epochs": int, "batch_size": int, "patience": int,
              "learning_rate": float, "optimizer": str,
              "hidden_multiplier": int, "mask_padding": _parse_bool,
              "clip_norm": _optional_float, "out": str,
              "no_figures": _parse_bool},
    "eval": {"split": str, "out": str, "no_figures": _parse_bool},
    "reconstruct": {"stay_id": int, "split": str, "out": str,
                    "no_figures": _parse_bool},
    "embed": {"split": str, "out": str},
}


def _apply_config_file(args: argparse.Namespace) -> None:
    """Overlay key=value pairs from --config onto parsed flags."""
    path = getattr(args, "config", None)
    if path is None:
        return
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    converters = _CONFIG_KEYS[args.command]
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key=value, "
                              f"got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in converters:
            raise ConfigError(f"{path} line {lineno}: unknown key {key!r} "
                              f"for command {args.command!r}")
        try:
            setattr(args, key, converters[key](value.strip()))
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"{path} line {lineno}: bad value for "
                              f"{key!r}: {err}") from None


def _manifest_hash(payload: dict, out_path: Path) -> str:
    """Write the run manifest and return the hash stamped into its CSVs."""
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    out_path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _write_report_csv(path: Path, manifest_hash: str,
                      header: Sequence[str],
                      rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(value: float) -> str:
    return repr(float(value))


def _model_label(header: dict) -> str:
    label = header.get("model")
    return label if label in MODEL_KINDS else header["kind"]


def _build_model(model_kind: str, interval: int, seed: int,
                 hidden_multiplier: int):
    embedding = embedding_dim(interval, NUM_FEATURES)
    if model_kind == "dense1":
        return init_dense(interval * NUM_FEATURES, [embedding], seed)
    if model_kind == "dense2":
        return init_dense(interval * NUM_FEATURES,
                          [hidden_multiplier * embedding, embedding], seed)
    if model_kind == "seq":
        return init_seq(NUM_FEATURES, embedding, seed)
    raise ConfigError(f"unknown model kind {model_kind!r}")


def _subset_indices(split: PreparedSplit, care_unit: Optional[str]) -> np.ndarray:
    if care_unit is None:
        return np.arange(len(split.stays))
    return np.array([i for i, s in enumerate(split.stays)
                     if s.care_unit == care_unit], dtype=np.int64)


def _take(windows: WindowSet, idx: np.ndarray) -> WindowSet:
    return WindowSet(windows=windows.windows[idx],
                     true_hours=windows.true_hours[idx])


def cmd_generate(args: argparse.Namespace) -> int:
    manifest = generate_synthetic_cohort(args.patients, args.seed,
                                         args.out, progress_every=500)
    print(f"wrote {manifest['n_events']} events for "
          f"{manifest['n_patients']} patients to {args.out}")
    print(f"cohort mortality rate: {manifest['mortality_rate']:.3f}")
    print(f"content hash: {manifest['content_hash']}")
    return 0


def cmd_prepare(args: argparse.Namespace) -> int:
    dataset = prepare_dataset(args.events, args.stays,
                              interval_hours=args.interval, seed=args.seed,
                              care_unit=args.care_unit, fill=args.fill,
                              schema_path=args.schema)
    content_hash = save_dataset(dataset, args.out)

    print("cohort summary:")
    for stage, count in dataset.filter_summary.items():
        print(f"  {stage}: {count}")
    unit_counts = {unit: 0 for unit in CARE_UNITS}
    for split in dataset.splits.values():
        for stay in split.stays:
            unit_counts[stay.care_unit] += 1
    print("care units:")
    for unit in CARE_UNITS:
        print(f"  {unit}: {unit_counts[unit]}")
    print("split sizes:")
    for name in SPLIT_NAMES:
        print(f"  {name}: {len(dataset.splits[name].stay_ids)}")
    print(f"interval: {args.interval} hours "
          f"(flat width {args.interval * NUM_FEATURES})")
    print(f"content hash: {content_hash}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.dataset)
    interval = manifest["interval_hours"]
    if args.interval is not None and args.interval != interval:
        raise ConfigError(f"--interval {args.interval} conflicts with the "
                          f"dataset's interval {interval}")
    if args.mask_padding and args.model != "seq":
        raise ConfigError("--mask-padding applies to the seq model only")

    model = _build_model(args.model, interval, args.seed,
                         args.hidden_multiplier)
    config = TrainConfig(max_epochs=args.epochs, batch_size=args.batch_size,
                         patience=args.patience,
                         learning_rate=args.learning_rate,
                         optimizer=Optimizer(args.optimizer), seed=args.seed,
                         mask_padding=args.mask_padding,
                         clip_norm=args.clip_norm)

    train_split = load_split(args.dataset, "train")
    val_split = load_split(args.dataset, "validation")
    print(f"training {args.model} on {len(train_split.stay_ids)} stays "
          f"(interval {interval}h, seed {args.seed})")
    model, history = train(model, train_split.windows, val_split.windows,
                           config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "model.ckpt"
    save_checkpoint(model, checkpoint_path, seed=args.seed,
                    extra={"model": args.model, "interval_hours": interval,
                           "mask_padding": args.mask_padding,
                           "care_unit": manifest["care_unit"],
                           "dataset_hash": manifest["content_hash"]})

    run = {
        "kind": "train_run",
        "model": args.model,
        "interval_hours": interval,
        "dataset_hash": manifest["content_hash"],
        "config": {
            "max_epochs": config.max_epochs,
            "batch_size": config.batch_size,
            "patience": config.patience,
            "learning_rate": config.learning_rate,
            "optimizer": config.optimizer.value,
            "seed": config.seed,
            "mask_padding": config.mask_padding,
            "clip_norm": config.clip_norm,
            "hidden_multiplier": args.hidden_multiplier,
        },
        "checkpoint": checkpoint_path.name,
        "history_csv": "history.csv",
        "epochs_run": len(history.train_mse),
        "best_epoch": history.best_epoch,
        "best_val_mse": history.validation_mse[history.best_epoch - 1],
        "stopped_early": history.stopped_early,
    }
    run_hash = _manifest_hash(run, out / "run_manifest.json")
    write_history_csv(history, out / "history.csv", manifest_hash=run_hash)
    if not args.no_figures:
        render_history(history.train_mse, history.validation_mse,
                       history.best_epoch, out / "history.png")

    print(f"stopped after {len(history.train_mse)} epochs "
          f"(early stop: {history.stopped_early})")
    print(f"best epoch {history.best_epoch}, "
          f"val MSE {run['best_val_mse']:.6f}")
    print(f"checkpoint: {checkpoint_path}")
    return 0


def _eval_pairs(args: argparse.Namespace):
    """Match each checkpoint to the dataset with its training interval."""
    datasets: Dict[int, dict] = {}
    for directory in args.dataset:
        manifest = load_manifest(directory)
        interval = manifest["interval_hours"]
        if interval in datasets:
            raise ConfigError(f"two datasets share interval {interval}: "
                              f"{datasets[interval]['dir']} and {directory}")
        datasets[interval] = {"dir": directory, "manifest": manifest}

    pairs = []
    for ckpt_path in args.checkpoint:
        loaded = load_checkpoint(ckpt_path)
        interval = loaded.header.get("interval_hours")
        if interval is None:
            raise ConfigError(f"{ckpt_path} has no interval_hours metadata; "
                              f"was it written by `icuae train`?")
        if interval not in datasets:
            raise ConfigError(f"no dataset with interval {interval} supplied "
                              f"for checkpoint {ckpt_path}")
        if isinstance(loaded.model, DenseAutoencoder):
            expect = interval * NUM_FEATURES
            if loaded.model.input_dim != expect:
                raise ConfigError(f"{ckpt_path}: dense input dim "
                                  f"{loaded.model.input_dim} does not match "
                                  f"interval {interval} x {NUM_FEATURES}")
        pairs.append((loaded, Path(ckpt_path), datasets[interval]))
    return datasets, pairs


def cmd_eval(args: argparse.Namespace) -> int:
    if args.split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {args.split!r}")
    datasets, pairs = _eval_pairs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    run = {
        "kind": "eval_run",
        "split": args.split,
        "datasets": [{"interval_hours": i,
                      "content_hash": d["manifest"]["content_hash"],
                      "care_unit": d["manifest"]["care_unit"]}
                     for i, d in sorted(datasets.items())],
        "checkpoints": [{"file": path.name, "model": _model_label(l.header),
                         "interval_hours": l.header["interval_hours"],
                         "seed": l.seed, "n_params": l.header["n_params"]}
                        for l, path, _ in pairs],
    }
    run_hash = _manifest_hash(run, out / "eval_manifest.json")

    split_cache: Dict[int, PreparedSplit] = {}
    rows: List[List[str]] = []
    by_interval: Dict[int, Dict[str, float]] = {}
    by_unit: Dict[int, Dict[str, Dict[str, float]]] = {}
    for loaded, ckpt_path, entry in pairs:
        interval = loaded.header["interval_hours"]
        if interval not in split_cache:
            split_cache[interval] = load_split(entry["dir"], args.split)
        split = split_cache[interval]
        label = _model_label(loaded.header)
        mask = bool(loaded.header.get("mask_padding", False))
        for unit in (None,) + CARE_UNITS:
            idx = _subset_indices(split, unit)
            if idx.size == 0:
                continue
            subset = _take(split.windows, idx)
            start = time.perf_counter()
            mse_value = evaluate_mse(loaded.model, subset, mask_padding=mask)
            runtime = time.perf_counter() - start
            subset_name = unit or "all"
            rows.append([label, str(interval), args.split, subset_name,
                         _fmt(mse_value), str(idx.size), f"{runtime:.3f}"])
            if unit is None:
                by_interval.setdefault(interval, {})[label] = mse_value
            else:
                by_unit.setdefault(interval, {}).setdefault(
                    subset_name, {})[label] = mse_value
        print(f"evaluated {label} (interval {interval}h) on "
              f"{len(split.stay_ids)} {args.split} stays")

    _write_report_csv(out / "eval_report.csv", run_hash,
                      ["model", "interval_hours", "split", "subset", "mse",
                       "n_windows", "runtime_seconds"], rows)

    models = sorted({_model_label(l.header) for l, _, _ in pairs})
    fig2_rows = []
    fig2_table: Dict[str, Dict[str, float]] = {}
    for interval in sorted(by_interval):
        cells = by_interval[interval]
        fig2_rows.append([str(interval)]
                         + [(_fmt(cells[m]) if m in cells else "")
                            for m in models])
        fig2_table[str(interval)] = cells
    _write_report_csv(out / "figure2.csv", run_hash,
                      ["interval_hours"] + models, fig2_rows)

    fig3_interval = (FIGURE3_INTERVAL if FIGURE3_INTERVAL in by_unit
                     else max(by_unit, default=None))
    fig3_rows = []
    fig3_table: Dict[str, Dict[str, float]] = {}
    if fig3_interval is not None:
        for unit in CARE_UNITS:
            cells = by_unit[fig3_interval].get(unit, {})
            if not cells:
                continue
            fig3_rows.append([unit] + [(_fmt(cells[m]) if m in cells else "")
                                       for m in models])
            fig3_table[unit] = cells
    _write_report_csv(out / "figure3.csv", run_hash,
                      ["care_unit"] + models, fig3_rows)

    if not args.no_figures:
        if fig2_table:
            render_grouped_bars(fig2_table, out / "figure2.png",
                                xlabel="Interval (hours)")
        if fig3_table:
            render_grouped_bars(
                fig3_table, out / "figure3.png", xlabel="Care unit",
                title=f"Test MSE by care unit ({fig3_interval}h windows)")
    print(f"wrote {out / 'eval_report.csv'}")
    return 0


def _load_single(args: argparse.Namespace):
    """Checkpoint + matching split for single-model commands."""
    if args.split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {args.split!r}")
    manifest = load_manifest(args.dataset)
    loaded = load_checkpoint(args.checkpoint)
    ckpt_interval = loaded.header.get("interval_hours")
    if ckpt_interval is not None and ckpt_interval != manifest["interval_hours"]:
        raise ConfigError(f"checkpoint interval {ckpt_interval} does not "
                          f"match dataset interval "
                          f"{manifest['interval_hours']}")
    if isinstance(loaded.model, DenseAutoencoder):
        expect = manifest["interval_hours"] * NUM_FEATURES
        if loaded.model.input_dim != expect:
            raise ConfigError(f"dense input dim {loaded.model.input_dim} "
                              f"does not match flat width {expect}")
    split = load_split(args.dataset, args.split)
    return manifest, loaded, split


def _reconstruct_window(model, window: np.ndarray,
                        true_hours: int, mask: bool) -> np.ndarray:
    if isinstance(model, DenseAutoencoder):
        flat = window.reshape(1, -1)
        recon, _ = dense_forward(model, flat)
        return recon.reshape(window.shape)
    batch = SeqBatch(values=window[None],
                     true_lengths=np.array([true_hours]))
    recon, _ = seq_reconstruct(model, batch, mask_padding=mask)
    return recon[0]


def cmd_reconstruct(args: argparse.Namespace) -> int:
    manifest, loaded, split = _load_single(args)
    if args.stay_id not in split.stay_ids:
        raise DataError(f"stay {args.stay_id} is not in the "
                        f"{args.split} split")
    pos = split.stay_ids.index(args.stay_id)
    window = split.windows.windows[pos]
    true_hours = int(split.windows.true_hours[pos])
    mask = bool(loaded.header.get("mask_padding", False))
    recon = _reconstruct_window(loaded.model, window, true_hours, mask)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run = {
        "kind": "reconstruct_run",
        "model": _model_label(loaded.header),
        "stay_id": args.stay_id,
        "split": args.split,
        "true_hours": true_hours,
        "interval_hours": manifest["interval_hours"],
        "dataset_hash": manifest["content_hash"],
    }
    run_hash = _manifest_hash(run, out.with_suffix(".manifest.json"))

    names = manifest["feature_names"]
    rows = []
    for hour in range(window.shape[0]):
        for f in range(NUM_FEATURES):
            rows.append([str(hour), names[f], _fmt(window[hour, f]),
                         _fmt(recon[hour, f])])
    _write_report_csv(out, run_hash,
                      ["hour", "feature", "true_value",
                       "reconstructed_value"], rows)
    if not args.no_figures:
        render_reconstruction_grid(window, recon, names, true_hours,
                                   out.with_suffix(".png"))
    print(f"wrote {out} ({len(rows)} rows, stay {args.stay_id}, "
          f"{true_hours} true hours)")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    manifest, loaded, split = _load_single(args)
    mask = bool(loaded.header.get("mask_padding", False))
    model = loaded.model
    if isinstance(model, DenseAutoencoder):
        flats = split.windows.windows.reshape(len(split.stay_ids), -1)
        embeddings = dense_embed(model, flats)
    else:
        embeddings = np.concatenate([
            encode(model,
                   SeqBatch(values=split.windows.windows[i:i + 128],
                            true_lengths=split.windows.true_hours[i:i + 128]),
                   mask_padding=mask)
            for i in range(0, len(split.stay_ids), 128)])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run = {
        "kind": "embed_run",
        "model": _model_label(loaded.header),
        "split": args.split,
        "embedding_width": int(embeddings.shape[1]),
        "dataset_hash": manifest["content_hash"],
    }
    run_hash = _manifest_hash(run, out.with_suffix(".manifest.json"))
    header = ["stay_id"] + [f"e{k:03d}" for k in range(embeddings.shape[1])]
    rows = [[str(stay_id)] + [_fmt(v) for v in embeddings[i]]
            for i, stay_id in enumerate(split.stay_ids)]
    _write_report_csv(out, run_hash, header, rows)
    print(f"wrote {out} ({len(rows)} stays x {embeddings.shape[1]} dims)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icuae",
        description="ICU timeseries autoencoders: synthetic cohorts, "
                    "preprocessing, training, and evaluation reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", default=None,
                       help="key=value file; entries override flags")

    p = sub.add_parser("generate", help="write a synthetic raw cohort")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="raw CSVs to windowed dataset")
    p.add_argument("--events", required=True)
    p.add_argument("--stays", required=True)
    p.add_argument("--schema", default=None,
                   help="feature schema CSV; defaults to features.csv "
                        "next to the events file")
    p.add_argument("--interval", type=int, choices=INTERVAL_CHOICES,
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--care-unit", choices=CARE_UNITS, default=None)
    p.add_argument("--fill", choices=("backward", "forward"),
                   default="backward")
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model on a prepared dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--interval", type=int, choices=INTERVAL_CHOICES,
                   default=None,
                   help="cross-check against the dataset manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--hidden-multiplier", type=int, default=4,
                   help="dense2 outer hidden width, as a multiple of the "
                        "embedding width")
    p.add_argument("--mask-padding", action="store_true")
    p.add_argument("--clip-norm", type=_optional_float, default=5.0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval",
                       help="test MSE per model/interval/care unit")
    p.add_argument("--dataset", action="append", required=True,
                   help="prepared dataset dir; repeat for several intervals")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="trained checkpoint; repeatable")
    p.add_argument("--split", default="test")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct",
                       help="per-feature reconstruction CSV for one stay")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stay-id", type=int, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("embed", help="embedding CSV, one row per stay")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_embed)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
