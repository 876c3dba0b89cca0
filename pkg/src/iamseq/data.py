"""CSV ingestion, normalisation, windowing, batching and a synthetic TEP-like generator.

CSV layout: a header row with feature columns ``f00 .. f{F-1}`` and a
``label`` column.  Labels are either constant for the whole file (one fault
run per file) or vary per row (converted test runs where the fault starts
mid-series; pass ``per_row=True``).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractError, DataLoadError, ParameterError
from .tensor import Tensor

log = logging.getLogger(__name__)

NUM_FEATURES = 52
MAX_CLASSES = 21
_FEATURE_RE = re.compile(r"^f(\d+)$")


def feature_names(n: int) -> list[str]:
    return [f"f{i:02d}" for i in range(n)]


@dataclass
class RawSeries:
    values: np.ndarray  # (samples, features)
    labels: np.ndarray  # (samples,), int
    source: str = "<memory>"
    per_row: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2 or self.labels.shape != (self.values.shape[0],):
            raise ContractError(f"{self.source}: values {self.values.shape} / labels {self.labels.shape} mismatch")

    @property
    def label(self) -> int:
        if self.per_row:
            raise ContractError(f"{self.source}: per-row labelled series has no single label")
        return int(self.labels[0])

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_features(self) -> int:
        return self.values.shape[1]


def load_csv(path, num_features: int | None = NUM_FEATURES, per_row: bool = False) -> RawSeries:
    """Parse one CSV series.  Row numbers in errors count data rows from 1."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataLoadError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataLoadError(f"{path}: empty file") from None
        if num_features is None:
            num_features = sum(1 for h in header if _FEATURE_RE.match(h))
        wanted = feature_names(num_features) + ["label"]
        for name in wanted:
            if name not in header:
                raise DataLoadError(f"{path}: missing column {name}")
        cols = [header.index(name) for name in wanted]
        rows, labels = [], []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataLoadError(f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}")
            vals = []
            for c in cols[:-1]:
                cell = row[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataLoadError(f"{path}: row {rownum}, column {header[c]}: non-numeric cell {cell!r}") from None
                if not math.isfinite(v):
                    raise DataLoadError(f"{path}: row {rownum}, column {header[c]}: non-finite cell {cell!r}")
                vals.append(v)
            raw_label = row[cols[-1]].strip()
            try:
                lab = int(float(raw_label))
            except ValueError:
                raise DataLoadError(f"{path}: row {rownum}, column label: non-numeric label {raw_label!r}") from None
            if lab < 0 or float(raw_label) != lab:
                raise DataLoadError(f"{path}: row {rownum}, column label: invalid class id {raw_label!r}")
            if not per_row and labels and lab != labels[0]:
                raise DataLoadError(
                    f"{path}: row {rownum}, column label: label {lab} differs from {labels[0]} in a constant-label file")
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise DataLoadError(f"{path}: no data rows")
    log.info("loaded %s: %d rows", path, len(rows))
    return RawSeries(np.array(rows), np.array(labels), str(path), per_row)


def write_csv(series: RawSeries, path) -> Path:
    path = Path(path)
    names = feature_names(series.num_features)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["label"])
        for row, lab in zip(series.values, series.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
    return path


def load_dir(directory, num_features: int | None = NUM_FEATURES, per_row: bool = False) -> list[RawSeries]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataLoadError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataLoadError(f"{directory}: no .csv files")
    return [load_csv(f, num_features, per_row) for f in files]


# ---------------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant_features: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std],
                "constant_features": list(self.constant_features)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        mean, std = np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1 or np.any(std <= 0):
            raise DataLoadError("normalizer stats are malformed")
        return cls(mean, std, [int(i) for i in d.get("constant_features", [])])

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "NormStats":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise DataLoadError(f"{path}: cannot read normalizer stats ({exc})") from exc


def fit_normalizer(train: Sequence[RawSeries]) -> NormStats:
    """Per-feature mean and population std over every training sample."""
    if not train:
        raise ContractError("fit_normalizer needs at least one series")
    values = np.concatenate([s.values for s in train], axis=0)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = [int(i) for i in np.flatnonzero(std == 0.0)]
    if constant:
        log.warning("constant features %s: std replaced by 1", constant)
        std = np.where(std == 0.0, 1.0, std)
    return NormStats(mean, std, constant)


def apply_normalizer(series: RawSeries, stats: NormStats) -> RawSeries:
    if series.num_features != stats.mean.shape[0]:
        raise ContractError(f"{series.source}: {series.num_features} features, stats expect {stats.mean.shape[0]}")
    return RawSeries((series.values - stats.mean) / stats.std, series.labels, series.source, series.per_row)


def invert_normalizer(series: RawSeries, stats: NormStats) -> RawSeries:
    return RawSeries(series.values * stats.std + stats.mean, series.labels, series.source, series.per_row)


# ---------------------------------------------------------------------------
# windows and batches


@dataclass
class WindowSet:
    inputs: np.ndarray  # (n, seq_len, features)
    labels: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i) -> tuple[np.ndarray, int]:
        return self.inputs[i], int(self.labels[i])

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        if not parts:
            raise ContractError("no window sets to concatenate")
        return cls(np.concatenate([p.inputs for p in parts]), np.concatenate([p.labels for p in parts]))


def windowize(series: RawSeries, seq_len: int = 10, stride: int = 1) -> WindowSet:
    if seq_len < 1 or stride < 1:
        raise ParameterError(f"seq_len and stride must be positive, got {seq_len}, {stride}")
    n = series.num_samples
    if n < seq_len:
        raise ContractError(f"{series.source}: {n} samples is shorter than seq_len={seq_len}")
    starts = np.arange(0, n - seq_len + 1, stride)
    idx = starts[:, None] + np.arange(seq_len)[None, :]
    inputs = series.values[idx]
    labels = series.labels[starts + seq_len - 1] if series.per_row else np.full(len(starts), series.label)
    return WindowSet(inputs, labels.astype(np.int64))


def windowize_all(series: Sequence[RawSeries], seq_len: int = 10, stride: int = 1) -> WindowSet:
    return WindowSet.concat([windowize(s, seq_len, stride) for s in series])


@dataclass
class SequenceBatch:
    inputs: Tensor
    labels: np.ndarray


def make_batches(windows: WindowSet, batch_size: int = 64, shuffle: bool = False,
                 rng: np.random.Generator | None = None) -> Iterator[SequenceBatch]:
    """Yield consecutive batches; the last one may be short."""
    if len(windows) == 0:
        raise ContractError("make_batches needs at least one window")
    if batch_size < 1:
        raise ParameterError(f"batch_size must be positive, got {batch_size}")
    order = np.arange(len(windows))
    if shuffle:
        if rng is None:
            raise ContractError("shuffling needs an explicit rng")
        order = rng.permutation(len(windows))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield SequenceBatch(Tensor(windows.inputs[idx]), windows.labels[idx].copy())


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic generator, all in units of the noise std."""

    shift: float = 3.0
    drift_amplitude: float = 1.0
    ar_coefficient: float = 0.5


def _channel_order(num_features: int) -> list[int]:
    stride = 17 if math.gcd(17, num_features) == 1 else 1
    return [(4 + stride * j) % num_features for j in range(num_features)]


def signature_channels(k: int, num_features: int = NUM_FEATURES) -> list[int]:
    """Channels carrying class ``k``'s signature; empty for the normal class 0.

    Odd classes get two channels, even classes three, assigned without reuse
    from the fixed order ``(4 + 17 j) mod 52``; classes 1..20 use 50 channels.
    """
    if k < 0 or k >= MAX_CLASSES:
        raise ParameterError(f"class id must lie in 0..{MAX_CLASSES - 1}, got {k}")
    if k == 0:
        return []
    counts = [2 if c % 2 else 3 for c in range(1, k + 1)]
    start = sum(counts[:-1])
    order = _channel_order(num_features)
    if start + counts[-1] > num_features:
        raise ParameterError(f"{num_features} features cannot host disjoint signatures up to class {k}")
    return sorted(order[start:start + counts[-1]])


def _plant(rng: np.random.Generator, num_features: int) -> tuple[np.ndarray, np.ndarray]:
    # engineering-unit offsets and scales so normalisation has work to do
    return rng.uniform(-50.0, 150.0, num_features), rng.uniform(0.2, 5.0, num_features)


def _series(k: int, n: int, rng: np.random.Generator, offset: np.ndarray, scale: np.ndarray,
            p: SynthParams) -> np.ndarray:
    f = offset.shape[0]
    phi = p.ar_coefficient
    eps = rng.normal(size=(n, f)) * math.sqrt(1.0 - phi * phi)
    noise = np.empty((n, f))
    noise[0] = rng.normal(size=f)
    for t in range(1, n):
        noise[t] = phi * noise[t - 1] + eps[t]
    t = np.arange(n)
    for j, ch in enumerate(signature_channels(k, f)):
        sign = 1.0 if j % 2 == 0 else -1.0
        period = 6.0 + k
        noise[:, ch] += sign * p.shift + p.drift_amplitude * np.sin(2 * np.pi * t / period + j)
    return offset + scale * noise


def synth_generate(num_classes: int, windows_per_class: int, seed: int, seq_len: int = 10,
                   num_features: int = NUM_FEATURES,
                   params: SynthParams = SynthParams()) -> tuple[list[RawSeries], list[RawSeries]]:
    """One train and one test series per class; each yields ``windows_per_class`` stride-1 windows.

    Class 0 is AR(1) noise; class k adds a constant shift and a sinusoidal
    drift on :func:`signature_channels` ``(k)``.  Train and test noise come
    from independent child seeds of ``seed``.
    """
    if not 1 <= num_classes <= MAX_CLASSES:
        raise ParameterError(f"num_classes must lie in 1..{MAX_CLASSES}, got {num_classes}")
    if windows_per_class < 1:
        raise ParameterError("windows_per_class must be positive")
    plant_seq, train_seq, test_seq = np.random.SeedSequence(seed).spawn(3)
    offset, scale = _plant(np.random.default_rng(plant_seq), num_features)
    n = windows_per_class + seq_len - 1
    out = []
    for split, ss in (("train", train_seq), ("test", test_seq)):
        rngs = [np.random.default_rng(s) for s in ss.spawn(num_classes)]
        out.append([RawSeries(_series(k, n, rngs[k], offset, scale, params), np.full(n, k),
                              f"synth:{split}:class_{k:02d}") for k in range(num_classes)])
    return out[0], out[1]
