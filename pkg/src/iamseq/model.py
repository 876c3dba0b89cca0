"""The full classifier: input attention, BiLSTM, output attention, pooled MLP head."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .attention import AttentionAxis, iam_forward
from .errors import ContractError, DimensionError, ParameterError
from .recurrent import GATES, BiLstmParams, LstmParams, bilstm_forward, init_lstm_params
from .tensor import Tensor


class Pooling(str, enum.Enum):
    LAST_STEP = "last_step"
    MEAN_OVER_TIME = "mean_over_time"


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 10
    num_features: int = 52
    hidden: int = 128
    fc1: int = 128
    fc2: int = 64
    num_classes: int = 21
    dropout: float = 0.2
    pooling: Pooling = Pooling.MEAN_OVER_TIME

    def __post_init__(self):
        object.__setattr__(self, "pooling", Pooling(self.pooling))
        for name in ("seq_len", "num_features", "hidden", "fc1", "fc2", "num_classes"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= float(self.dropout) < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pooling"] = self.pooling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_count(cfg: ModelConfig) -> int:
    h, f = cfg.hidden, cfg.num_features
    lambdas = 2
    bilstm = 2 * len(GATES) * (h * (h + f) + h)
    fc1 = 2 * h * cfg.fc1 + cfg.fc1
    fc2 = cfg.fc1 * cfg.fc2 + cfg.fc2
    head = cfg.fc2 * cfg.num_classes + cfg.num_classes
    return lambdas + bilstm + fc1 + fc2 + head


class ParameterRegistry:
    """Insertion-ordered name -> trainable leaf map."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} registered twice")
        if any(t is tensor for t in self._params.values()):
            raise ContractError(f"tensor for {name!r} is already registered under another name")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            if arrays[k].shape != t.shape:
                raise DimensionError(f"{k}: snapshot shape {arrays[k].shape} != {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


class ModelOutput(NamedTuple):
    logits: Tensor
    attn_in: Tensor
    attn_out: Tensor


def _expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = cfg.hidden, cfg.num_features
    shapes: dict[str, tuple[int, ...]] = {"iam_in.lambda": ()}
    for d in ("fwd", "bwd"):
        for g in GATES:
            shapes[f"bilstm.{d}.W_{g}"] = (h, h + f)
        for g in GATES:
            shapes[f"bilstm.{d}.b_{g}"] = (h,)
    shapes["iam_out.lambda"] = ()
    for name, fan_in, fan_out in (("fc1", 2 * h, cfg.fc1), ("fc2", cfg.fc1, cfg.fc2),
                                  ("classifier", cfg.fc2, cfg.num_classes)):
        shapes[f"{name}.weight"] = (fan_in, fan_out)
        shapes[f"{name}.bias"] = (fan_out,)
    return shapes


class IAMBiLSTM:
    """Sequence classifier over ``(batch, seq_len, num_features)`` windows.

    Attention is applied across features on the input side and across time
    after the BiLSTM; both weight matrices are returned with the logits.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        self.config = config
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        reg = ParameterRegistry()
        reg.register("iam_in.lambda", Tensor(1.0))
        h, f = config.hidden, config.num_features
        for d in ("fwd", "bwd"):
            for k, t in init_lstm_params(f, h, rng).named().items():
                reg.register(f"bilstm.{d}.{k}", t)
        reg.register("iam_out.lambda", Tensor(1.0))
        for name, fan_in, fan_out in (("fc1", 2 * h, config.fc1), ("fc2", config.fc1, config.fc2),
                                      ("classifier", config.fc2, config.num_classes)):
            bound = 1.0 / np.sqrt(fan_in)
            reg.register(f"{name}.weight", Tensor(rng.uniform(-bound, bound, (fan_in, fan_out))))
            reg.register(f"{name}.bias", Tensor(np.zeros(fan_out)))
        self.params = reg

    @classmethod
    def from_registry(cls, config: ModelConfig, registry: ParameterRegistry) -> "IAMBiLSTM":
        expected = _expected_shapes(config)
        if registry.names() != list(expected):
            missing = sorted(set(expected) - set(registry.names()))
            extra = sorted(set(registry.names()) - set(expected))
            raise ContractError(f"registry does not match config (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            if registry[name].shape != shape:
                raise DimensionError(f"{name}: shape {registry[name].shape}, config expects {shape}")
        model = cls.__new__(cls)
        model.config = config
        model.params = registry
        return model

    def _bilstm(self) -> BiLstmParams:
        def side(d):
            return LstmParams(**{k: self.params[f"bilstm.{d}.{k}"] for k in
                                 [f"W_{g}" for g in GATES] + [f"b_{g}" for g in GATES]})

        return BiLstmParams(side("fwd"), side("bwd"))

    def _dense(self, x: Tensor, name: str) -> Tensor:
        return T.add(T.matmul(x, self.params[f"{name}.weight"]), self.params[f"{name}.bias"])

    def forward(self, batch, mode: str = "eval", rng: np.random.Generator | None = None) -> ModelOutput:
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        cfg = self.config
        x = T.as_tensor(batch)
        if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.num_features):
            raise DimensionError(
                f"batch shape {x.shape} does not match (B, {cfg.seq_len}, {cfg.num_features})")
        training = mode == "train"
        y1, attn_in = iam_forward(x, AttentionAxis.FEATURE, self.params["iam_in.lambda"])
        h = bilstm_forward(y1, self._bilstm())
        y2, attn_out = iam_forward(h, AttentionAxis.TIME, self.params["iam_out.lambda"])
        if cfg.pooling is Pooling.MEAN_OVER_TIME:
            pooled = T.mean(y2, axis=1)
        else:
            pooled = T.select(y2, cfg.seq_len - 1, axis=1)
        y3 = T.dropout(T.relu(self._dense(pooled, "fc1")), cfg.dropout, training, rng)
        z = T.dropout(T.relu(self._dense(y3, "fc2")), cfg.dropout, training, rng)
        return ModelOutput(self._dense(z, "classifier"), attn_in, attn_out)

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        return np.argmax(self.forward(batch, "eval").logits.data, axis=-1)
