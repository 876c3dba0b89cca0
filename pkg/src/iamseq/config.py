"""YAML run configuration, validated against a JSON schema before any work starts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigError, IAMError
from .model import ModelConfig, Pooling
from .training import TrainConfig

_POS_INT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _SEED,
        "out": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_dir": {"type": "string"},
                "test_dir": {"type": "string"},
                "per_row_labels": {"type": "boolean"},
                "stride": _POS_INT,
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "out_dir": {"type": "string"},
                "num_classes": {"type": "integer"},
                "windows_per_class": _POS_INT,
                "shift": {"type": "number", "exclusiveMinimum": 0},
                "drift_amplitude": {"type": "number", "minimum": 0},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seq_len": _POS_INT, "num_features": _POS_INT, "hidden": _POS_INT,
                "fc1": _POS_INT, "fc2": _POS_INT, "num_classes": _POS_INT,
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "pooling": {"enum": [p.value for p in Pooling]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": _POS_INT,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_floor": {"type": "number", "exclusiveMinimum": 0},
                "lr_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "patience": {"type": "integer", "minimum": 0},
                "shuffle": {"type": "boolean"},
                "selection": {"enum": ["test", "validation"]},
                "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "explain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"top_k": _POS_INT, "correct_only": {"type": "boolean"}},
        },
    },
}


@dataclass
class DataConfig:
    train_dir: str | None = None
    test_dir: str | None = None
    per_row_labels: bool = False
    stride: int = 1


@dataclass
class SynthConfig:
    out_dir: str | None = None
    num_classes: int = 5
    windows_per_class: int = 200
    shift: float = 3.0
    drift_amplitude: float = 1.0


@dataclass
class ExplainConfig:
    top_k: int = 4
    correct_only: bool = True


@dataclass
class RunConfig:
    seed: int | None
    out: str
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def train_config(self) -> TrainConfig:
        if self.seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        return TrainConfig(seed=self.seed, **self.train)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "data": vars(self.data).copy(),
            "synth": vars(self.synth).copy(),
            "model": self.model.to_dict(),
            "train": dict(self.train),
            "explain": vars(self.explain).copy(),
        }

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def parse_config(raw: dict | None, name: str = "run", seed: int | None = None, out: str | None = None) -> RunConfig:
    raw = {} if raw is None else raw
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    try:
        cfg = RunConfig(
            seed=raw.get("seed"),
            out=raw.get("out", str(Path("runs") / name)),
            data=DataConfig(**raw.get("data", {})),
            synth=SynthConfig(**raw.get("synth", {})),
            model=ModelConfig(**raw.get("model", {})),
            train=dict(raw.get("train", {})),
            explain=ExplainConfig(**raw.get("explain", {})),
        )
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out is not None:
            cfg = replace(cfg, out=out)
        if cfg.seed is not None:
            cfg.train_config()  # range checks on training knobs
    except IAMError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, seed: int | None = None, out: str | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, seed=seed, out=out)
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw, name=path.stem, seed=seed, out=out)
