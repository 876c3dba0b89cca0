"""Confusion-matrix metrics for multi-class fault classification.

Class 0 is the normal condition.  The false-alarm rate is the share of normal
samples predicted as any fault.  Ratios with a zero denominator are reported
as 0 and the class is listed in the matching ``undefined_*`` field.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import WindowSet, make_batches
from .errors import ContractError
from .model import IAMBiLSTM


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true, y_pred = np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"truth {y_true.shape} and predictions {y_pred.shape} differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ContractError(f"class ids must lie in [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, list[int]]:
    num, den = num.astype(np.float64), den.astype(np.float64)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out, [int(i) for i in np.flatnonzero(den == 0)]


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    false_discovery: np.ndarray
    false_alarm_rate: float
    misclassification_rate: float
    normal_class: int = 0
    undefined_precision: list[int] = field(default_factory=list)
    undefined_recall: list[int] = field(default_factory=list)

    @classmethod
    def from_confusion(cls, confusion, normal_class: int = 0) -> "MetricsReport":
        conf = np.asarray(confusion, dtype=np.int64)
        if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
            raise ContractError(f"confusion matrix must be square, got {conf.shape}")
        total = int(conf.sum())
        if total == 0:
            raise ContractError("confusion matrix is empty")
        tp = np.diag(conf)
        predicted, actual = conf.sum(axis=0), conf.sum(axis=1)
        precision, undef_p = _ratio(tp, predicted)
        recall, undef_r = _ratio(tp, actual)
        f1, _ = _ratio(2 * precision * recall, precision + recall)
        fdr, _ = _ratio(predicted - tp, predicted)
        normal = actual[normal_class]
        far = float((normal - conf[normal_class, normal_class]) / normal) if normal else 0.0
        accuracy = int(tp.sum()) / total
        return cls(conf, accuracy, precision, recall, f1, fdr, far, 1.0 - accuracy, normal_class, undef_p, undef_r)

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "accuracy": self.accuracy,
            "misclassification_rate": self.misclassification_rate,
            "false_alarm_rate": self.false_alarm_rate,
            "normal_class": self.normal_class,
            "per_class": [
                {"class": c, "support": int(self.confusion[c].sum()), "precision": float(self.precision[c]),
                 "recall": float(self.recall[c]), "f1": float(self.f1[c]),
                 "false_discovery_rate": float(self.false_discovery[c])}
                for c in range(self.confusion.shape[0])
            ],
            "undefined_precision": self.undefined_precision,
            "undefined_recall": self.undefined_recall,
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report = out / "metrics.json"
        report.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        conf_path = out / "confusion.csv"
        n = self.confusion.shape[0]
        with conf_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["truth\\pred"] + [str(c) for c in range(n)])
            for c in range(n):
                w.writerow([c] + [int(v) for v in self.confusion[c]])
        return report, conf_path

    def summary(self) -> str:
        return (f"samples={self.num_samples} accuracy={self.accuracy:.4f} "
                f"FAR={self.false_alarm_rate:.4f} misclassification={self.misclassification_rate:.4f} "
                f"macroF1={float(self.f1.mean()):.4f}")


def predict(model: IAMBiLSTM, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([model.predict(b.inputs) for b in make_batches(windows, batch_size)])


def evaluate(model: IAMBiLSTM, test_data: WindowSet, batch_size: int = 256) -> MetricsReport:
    if len(test_data) == 0:
        raise ContractError("cannot evaluate on an empty test set")
    preds = predict(model, test_data, batch_size)
    return MetricsReport.from_confusion(confusion_matrix(test_data.labels, preds, model.config.num_classes))
