"""Cross-entropy, Adam with reduce-on-plateau, and the epoch loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import WindowSet, make_batches
from .errors import ContractError, DivergenceError, NumericError, ParameterError
from .model import IAMBiLSTM
from .tensor import Tensor

log = logging.getLogger(__name__)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood via a fused log-softmax."""
    logits = T.as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractError(f"logits {logits.shape} and labels {labels.shape} disagree")
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return T.scale(T.tsum(T.mul(T.log_softmax(logits, axis=-1), onehot)), -1.0 / labels.size)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray] | None,
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place.  ``grads=None`` reads ``.grad``."""
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name in params:
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient for parameter {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    staged = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name, np.zeros_like(p.data)) * state.beta1 + (1.0 - state.beta1) * g
            v = state.v.get(name, np.zeros_like(p.data)) * state.beta2 + (1.0 - state.beta2) * (g * g)
            new = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            if not (np.isfinite(v).all() and np.isfinite(new).all()):
                raise NumericError(f"Adam update for parameter {name!r} overflowed")
            staged[name] = (m, v, new)
    # commit only once every parameter produced a finite update
    state.t = t
    for name, (m, v, new) in staged.items():
        state.m[name], state.v[name] = m, v
        params[name].data = new
    return state


@dataclass
class LrSchedule:
    """Reduce-on-plateau: after ``patience`` epochs without improvement, multiply by ``factor``."""

    initial: float = 1e-3
    floor: float = 1e-4
    factor: float = 0.1
    patience: int = 10
    current: float = field(init=False)
    best: float = field(init=False, default=float("inf"))
    bad_epochs: int = field(init=False, default=0)

    def __post_init__(self):
        if not 0 < self.floor <= self.initial:
            raise ParameterError(f"need 0 < floor <= initial, got {self.floor}, {self.initial}")
        if not 0 < self.factor < 1:
            raise ParameterError(f"factor must lie in (0, 1), got {self.factor}")
        self.current = self.initial

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.current = max(self.floor, self.current * self.factor)
                self.bad_epochs = 0
        return self.current


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainConfig:
    seed: int
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    lr_floor: float = 1e-4
    lr_factor: float = 0.1
    patience: int = 10
    shuffle: bool = True
    selection: str = "test"  # or "validation"
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_floor <= self.lr:
            raise ParameterError(f"need 0 < lr_floor <= lr, got lr_floor={self.lr_floor}, lr={self.lr}")
        if not 0 < self.lr_factor < 1:
            raise ParameterError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.selection not in ("test", "validation"):
            raise ParameterError(f"selection must be 'test' or 'validation', got {self.selection!r}")
        if self.selection == "validation" and not 0 < self.val_fraction < 1:
            raise ParameterError("val_fraction must lie in (0, 1)")


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc", "lr")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    lr: float
    val_loss: float | None = None
    val_acc: float | None = None


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int  # 0 means the initial parameters
    best_state: dict[str, np.ndarray]
    best_loss: float | None


def evaluate_loss(model: IAMBiLSTM, windows: WindowSet, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode mean cross-entropy and accuracy."""
    if len(windows) == 0:
        raise ContractError("cannot evaluate on an empty window set")
    total, correct = 0.0, 0
    for batch in make_batches(windows, batch_size):
        logits = model(batch.inputs, "eval").logits
        total += cross_entropy(logits, batch.labels).item() * len(batch.labels)
        correct += int((logits.data.argmax(axis=-1) == batch.labels).sum())
    return total / len(windows), correct / len(windows)


def write_history(history: list[EpochRecord], path) -> Path:
    path = Path(path)
    with_val = any(r.val_loss is not None for r in history)
    cols = HISTORY_COLUMNS + (("val_loss", "val_acc") if with_val else ())
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in history:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in cols[1:]])
    return path


def _split_validation(windows: WindowSet, fraction: float, rng: np.random.Generator) -> tuple[WindowSet, WindowSet]:
    order = rng.permutation(len(windows))
    n_val = max(1, int(round(fraction * len(windows))))
    val, tr = np.sort(order[:n_val]), np.sort(order[n_val:])
    if tr.size == 0:
        raise ContractError("validation split leaves no training windows")
    return WindowSet(windows.inputs[tr], windows.labels[tr]), WindowSet(windows.inputs[val], windows.labels[val])


def train(model: IAMBiLSTM, train_data: WindowSet, test_data: WindowSet, cfg: TrainConfig,
          out_dir=None, metadata: dict | None = None) -> TrainResult:
    """Fit ``model`` in place; keep the parameters with the lowest selection loss.

    With ``out_dir`` set, ``best.ckpt`` is written before the first epoch and
    again at every new minimum, and ``last.ckpt`` plus ``history.csv`` at the end.
    """
    if len(train_data) == 0 or len(test_data) == 0:
        raise ContractError("train and test sets must be non-empty")
    mcfg = model.config
    for name, ws in (("train", train_data), ("test", test_data)):
        if ws.inputs.shape[1:] != (mcfg.seq_len, mcfg.num_features):
            raise ContractError(f"{name} windows {ws.inputs.shape[1:]} do not match model "
                                f"({mcfg.seq_len}, {mcfg.num_features})")
        if ws.labels.max() >= mcfg.num_classes:
            raise ContractError(f"{name} labels exceed num_classes={mcfg.num_classes}")
    split_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    val_data = None
    if cfg.selection == "validation":
        train_data, val_data = _split_validation(train_data, cfg.val_fraction, np.random.default_rng(split_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    out = Path(out_dir) if out_dir is not None else None
    meta = dict(metadata or {})

    def checkpoint(name: str, epoch: int, best_loss):
        if out is not None:
            save_checkpoint(model.params, mcfg, out / name, seed=cfg.seed,
                            metadata={**meta, "epoch": epoch, "best_loss": best_loss, "selection": cfg.selection})

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    checkpoint("best.ckpt", 0, None)
    best_state = model.params.snapshot()
    best_epoch, best_loss = 0, None
    schedule = LrSchedule(cfg.lr, cfg.lr_floor, cfg.lr_factor, cfg.patience)
    adam = AdamState()
    history: list[EpochRecord] = []

    for epoch in range(1, cfg.epochs + 1):
        lr = schedule.current
        loss_sum, correct, seen = 0.0, 0, 0
        for step, batch in enumerate(make_batches(train_data, cfg.batch_size, cfg.shuffle, shuffle_rng)):
            try:
                model.params.zero_grad()
                logits = model(batch.inputs, "train", dropout_rng).logits
                loss = cross_entropy(logits, batch.labels)
                T.backward(loss)
                adam_step(model.params, None, adam, lr)
            except NumericError as exc:
                raise DivergenceError(f"epoch {epoch}, step {step}: {exc}") from exc
            n = len(batch.labels)
            loss_sum += loss.item() * n
            correct += int((logits.data.argmax(axis=-1) == batch.labels).sum())
            seen += n
        test_loss, test_acc = evaluate_loss(model, test_data)
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, test_loss, test_acc, lr)
        select_loss = test_loss
        if val_data is not None:
            rec.val_loss, rec.val_acc = evaluate_loss(model, val_data)
            select_loss = rec.val_loss
        history.append(rec)
        schedule.step(select_loss)
        if best_loss is None or select_loss < best_loss:
            best_loss, best_epoch = select_loss, epoch
            best_state = model.params.snapshot()
            checkpoint("best.ckpt", epoch, best_loss)
        log.info("epoch %d train %.4f/%.4f test %.4f/%.4f lr %.0e", epoch, rec.train_loss, rec.train_acc,
                 test_loss, test_acc, lr)

    if out is not None:
        checkpoint("last.ckpt", cfg.epochs, best_loss)
        write_history(history, out / "history.csv")
    return TrainResult(history, best_epoch, best_state, best_loss)
