"""Command-line entry point: ``iamseq {synth,train,eval,explain,prep}``.

Every failure prints one line ``ERR:<category>:<message>`` on stderr and
exits 2 (configuration), 3 (data, contract, checkpoint, I/O) or 4 (numeric
divergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .data import (NUM_FEATURES, NormStats, RawSeries, SynthParams, apply_normalizer, fit_normalizer,
                   load_csv, load_dir, signature_channels, synth_generate, windowize_all, write_csv)
from .errors import (CheckpointIntegrityError, CheckpointVersionError, ConfigError, ContractError,
                     DataLoadError, DimensionError, IAMError, NumericError, ParameterError)
from .explain import explain
from .metrics import evaluate
from .model import IAMBiLSTM
from .training import train

log = logging.getLogger("iamseq")

NORMALIZER_FILE = "normalizer.json"

# (exception type, category, exit code), checked in order
_ERROR_TABLE = (
    (NumericError, "numeric", 4),
    (ConfigError, "config", 2),
    (ParameterError, "parameter", 2),
    (DataLoadError, "data", 3),
    ((CheckpointIntegrityError, CheckpointVersionError), "checkpoint", 3),
    ((ContractError, DimensionError), "contract", 3),
    (OSError, "io", 3),
    (IAMError, "error", 3),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERR:usage:{message}", file=sys.stderr)
        sys.exit(2)


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {v}")
    return v


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise DataLoadError(f"{what} {path} does not exist or is not a directory")
    return path


def _data_dirs(cfg: RunConfig) -> tuple[Path, Path]:
    root = Path(cfg.out) / "data"
    train_dir = Path(cfg.data.train_dir) if cfg.data.train_dir else root / "train"
    test_dir = Path(cfg.data.test_dir) if cfg.data.test_dir else root / "test"
    return train_dir, test_dir


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    if cfg.seed is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    s = cfg.synth
    out = Path(s.out_dir) if s.out_dir else Path(cfg.out) / "data"
    params = SynthParams(shift=s.shift, drift_amplitude=s.drift_amplitude)
    train_series, test_series = synth_generate(s.num_classes, s.windows_per_class, cfg.seed,
                                               cfg.model.seq_len, cfg.model.num_features, params)
    files = []
    for split, series in (("train", train_series), ("test", test_series)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for k, ser in enumerate(series):
            path = write_csv(ser, out / split / f"class_{k:02d}.csv")
            files.append({"path": f"{split}/{path.name}", "label": k, "rows": ser.num_samples})
    manifest = {
        "generator": "iamseq.synth",
        "version": __version__,
        "seed": cfg.seed,
        "num_classes": s.num_classes,
        "windows_per_class": s.windows_per_class,
        "seq_len": cfg.model.seq_len,
        "num_features": cfg.model.num_features,
        "params": {"shift": params.shift, "drift_amplitude": params.drift_amplitude,
                   "ar_coefficient": params.ar_coefficient},
        "signature_channels": {str(k): signature_channels(k, cfg.model.num_features)
                               for k in range(s.num_classes)},
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(files)} files and manifest.json to {out}")
    return 0


def _load_split(directory: Path, cfg: RunConfig, num_features: int | None) -> list[RawSeries]:
    return load_dir(directory, num_features, cfg.data.per_row_labels)


def cmd_train(cfg: RunConfig, args) -> int:
    tcfg = cfg.train_config()
    train_dir, test_dir = _data_dirs(cfg)
    _require_dir(train_dir, "train dir")
    _require_dir(test_dir, "test dir")
    mcfg = cfg.model
    train_raw = _load_split(train_dir, cfg, mcfg.num_features)
    test_raw = _load_split(test_dir, cfg, mcfg.num_features)
    stats = fit_normalizer(train_raw)
    train_w = windowize_all([apply_normalizer(s, stats) for s in train_raw], mcfg.seq_len, cfg.data.stride)
    test_w = windowize_all([apply_normalizer(s, stats) for s in test_raw], mcfg.seq_len, cfg.data.stride)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stats.save(out / NORMALIZER_FILE)
    cfg.dump(out / "config.yaml")
    model = IAMBiLSTM(mcfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))
    log.info("training on %d windows, testing on %d", len(train_w), len(test_w))
    result = train(model, train_w, test_w, tcfg, out_dir=out,
                   metadata={"train_windows": len(train_w), "test_windows": len(test_w)})
    if result.history:
        rec = result.history[result.best_epoch - 1] if result.best_epoch else None
        if rec is None:
            print(f"best epoch 0 (initial parameters); wrote {out}")
        else:
            print(f"best epoch {result.best_epoch} test_loss {rec.test_loss:.6f} "
                  f"test_acc {rec.test_acc:.6f}; wrote {out}")
    else:
        print(f"epochs=0: initial checkpoint written to {out / 'best.ckpt'}")
    return 0


def _load_for_inference(cfg: RunConfig, args):
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "best.ckpt"
    registry, mcfg = load_checkpoint(ckpt)
    model = IAMBiLSTM.from_registry(mcfg, registry)
    norm_path = Path(args.normalizer) if args.normalizer else ckpt.parent / NORMALIZER_FILE
    if not norm_path.is_file():
        raise DataLoadError(f"normalizer sidecar {norm_path} not found")
    stats = NormStats.load(norm_path)
    test_dir = Path(args.test_dir) if args.test_dir else _data_dirs(cfg)[1]
    _require_dir(test_dir, "test dir")
    raw = _load_split(test_dir, cfg, None)
    for s in raw:
        if s.num_features != mcfg.num_features:
            raise ContractError(f"{s.source}: {s.num_features} features, checkpoint expects {mcfg.num_features}")
    if stats.mean.shape[0] != mcfg.num_features:
        raise ContractError(f"{norm_path}: {stats.mean.shape[0]} features, checkpoint expects {mcfg.num_features}")
    windows = windowize_all([apply_normalizer(s, stats) for s in raw], mcfg.seq_len, cfg.data.stride)
    root = Path(args.out) if args.out else (Path(cfg.out) if args.config else ckpt.parent)
    return model, windows, root


def cmd_eval(cfg: RunConfig, args) -> int:
    model, windows, root = _load_for_inference(cfg, args)
    report = evaluate(model, windows)
    paths = report.write(root / "eval")
    print(report.summary())
    print("wrote " + " ".join(str(p) for p in paths))
    return 0


def cmd_explain(cfg: RunConfig, args) -> int:
    model, windows, root = _load_for_inference(cfg, args)
    top_k = args.top_k if args.top_k is not None else cfg.explain.top_k
    report = explain(model, windows, top_k=top_k, correct_only=cfg.explain.correct_only)
    report.write(root / "explain")
    for c, top in sorted(report.top_features.items()):
        print(f"class {c:2d}: top features {top} ({report.window_counts[c]} windows)")
    for c in report.omitted:
        print(f"class {c:2d}: omitted, no correctly classified windows")
    print(f"wrote {len(report.importance)} heatmaps to {root / 'explain'}")
    return 0


def _read_dat(path: Path, num_features: int, label: int | None, fault_start: int | None) -> RawSeries:
    if label is None:
        raise ConfigError(f"{path}: --label is required to convert a .dat file")
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataLoadError(f"{path}: cannot parse whitespace-separated numbers ({exc})") from None
    if values.shape[1] != num_features and values.shape[0] == num_features:
        values = values.T  # stored feature-major
    if values.shape[1] != num_features:
        raise DataLoadError(f"{path}: shape {values.shape} has no axis of length {num_features}")
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise DataLoadError(f"{path}: row {r + 1}, column f{c:02d}: non-finite cell")
    labels = np.full(values.shape[0], label, dtype=np.int64)
    per_row = fault_start is not None
    if per_row:
        labels[:fault_start] = 0
    return RawSeries(values, labels, str(path), per_row)


def cmd_prep(cfg: RunConfig, args) -> int:
    if not args.inputs:
        raise ConfigError("prep needs at least one input file or directory")
    files: list[Path] = []
    for item in map(Path, args.inputs):
        if item.is_dir():
            files += sorted(p for p in item.iterdir() if p.suffix in (".csv", ".dat"))
        elif item.is_file():
            files.append(item)
        else:
            raise DataLoadError(f"input {item} does not exist")
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for path in files:
        if path.suffix == ".dat":
            series = _read_dat(path, args.num_features, args.label, args.fault_start)
        else:
            series = load_csv(path, args.num_features, per_row=args.per_row or cfg.data.per_row_labels)
        classes = sorted({int(v) for v in series.labels})
        line = f"{path}: ok, {series.num_samples} rows, {series.num_features} features, labels {classes}"
        if out is not None:
            dest = write_csv(series, out / (path.stem + ".csv"))
            line += f" -> {dest}"
        print(line)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain, "prep": cmd_prep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings and results")

    parser = _Parser(prog="iamseq", description="Attention-augmented BiLSTM fault classification.")
    parser.add_argument("--version", action="version", version=f"iamseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate the synthetic TEP-like dataset")
    sub.add_parser("train", parents=[common], help="train a model and write checkpoints")
    for name, text in (("eval", "score a checkpoint on test data"),
                       ("explain", "rank input features by received attention")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", help="checkpoint file (default: <out>/best.ckpt)")
        p.add_argument("--test-dir", help="directory of test CSVs (default: from the config)")
        p.add_argument("--normalizer", help="normalizer sidecar (default: next to the checkpoint)")
        if name == "explain":
            p.add_argument("--top-k", type=int, help="features listed per class (default 4)")
    p = sub.add_parser("prep", parents=[common], help="validate CSVs or convert whitespace .dat files")
    p.add_argument("inputs", nargs="*", help="files or directories")
    p.add_argument("--label", type=int, help="class id for converted .dat files")
    p.add_argument("--fault-start", type=int, help="rows before this index are labelled 0 (normal)")
    p.add_argument("--per-row", action="store_true", help="CSV labels may vary per row")
    p.add_argument("--num-features", type=int, default=NUM_FEATURES)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        # prep's --out is a plain destination, not a run directory
        cfg = load_config(args.config, seed=args.seed, out=None if args.command == "prep" else args.out)
        return COMMANDS[args.command](cfg, args)
    except (IAMError, OSError) as exc:
        for types, category, code in _ERROR_TABLE:
            if isinstance(exc, types):
                break
        message = " ".join(str(exc).split())
        print(f"ERR:{category}:{message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
