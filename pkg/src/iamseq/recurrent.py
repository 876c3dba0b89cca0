"""LSTM cell, unrolled LSTM, and bidirectional LSTM on the tensor core."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

GATES = ("f", "i", "C", "o")


@dataclass
class LstmParams:
    """Gate weights of shape ``(H, H + F_in)`` acting on ``[h_prev, x_t]``."""

    W_f: Tensor
    W_i: Tensor
    W_C: Tensor
    W_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_C: Tensor
    b_o: Tensor

    def __post_init__(self):
        h, width = self.W_f.shape
        for g in GATES:
            w, b = getattr(self, f"W_{g}"), getattr(self, f"b_{g}")
            if w.shape != (h, width) or b.shape != (h,):
                raise DimensionError(f"gate {g}: W {w.shape} / b {b.shape} inconsistent with hidden={h}")
        if width <= h:
            raise DimensionError(f"weight width {width} leaves no room for inputs with hidden={h}")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.hidden_size

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def __post_init__(self):
        a, b = self.forward, self.backward
        if (a.input_size, a.hidden_size) != (b.input_size, b.hidden_size):
            raise DimensionError("forward and backward LSTMs declare different sizes")

    @property
    def hidden_size(self) -> int:
        return self.forward.hidden_size


def init_lstm_params(input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    """Uniform(+-1/sqrt(H)) weights, zero biases except a forget bias of 1."""
    bound = 1.0 / np.sqrt(hidden_size)
    width = hidden_size + input_size
    ws = {f"W_{g}": Tensor(rng.uniform(-bound, bound, (hidden_size, width)), requires_grad=True) for g in GATES}
    bs = {f"b_{g}": Tensor(np.full(hidden_size, 1.0 if g == "f" else 0.0), requires_grad=True) for g in GATES}
    return LstmParams(**ws, **bs)


def init_bilstm_params(input_size: int, hidden_size: int, rng: np.random.Generator) -> BiLstmParams:
    return BiLstmParams(init_lstm_params(input_size, hidden_size, rng), init_lstm_params(input_size, hidden_size, rng))


def _gate(z: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(z, T.transpose_last_two(w)), b)


def lstm_cell_step(x_t, state: LstmState, params: LstmParams) -> LstmState:
    x_t = T.as_tensor(x_t)
    h = params.hidden_size
    if x_t.ndim != 2 or x_t.shape[1] != params.input_size:
        raise DimensionError(f"cell input {x_t.shape} does not match input_size={params.input_size}")
    if state.h.shape != (x_t.shape[0], h) or state.c.shape != (x_t.shape[0], h):
        raise DimensionError(f"state shapes {state.h.shape}/{state.c.shape} do not match batch and hidden={h}")
    z = T.concat([state.h, x_t], axis=-1)
    f = T.sigmoid(_gate(z, params.W_f, params.b_f))
    i = T.sigmoid(_gate(z, params.W_i, params.b_i))
    c_tilde = T.tanh(_gate(z, params.W_C, params.b_C))
    c = T.add(T.mul(f, state.c), T.mul(i, c_tilde))
    o = T.sigmoid(_gate(z, params.W_o, params.b_o))
    return LstmState(T.mul(o, T.tanh(c)), c)


def _check_seq(seq: Tensor, params: LstmParams) -> None:
    if seq.ndim != 3:
        raise DimensionError(f"sequence must be (batch, L, F_in), got {seq.shape}")
    if seq.shape[1] == 0:
        raise ContractError("empty sequence")
    if seq.shape[2] != params.input_size:
        raise DimensionError(f"sequence width {seq.shape[2]} does not match input_size={params.input_size}")


def _run(seq: Tensor, params: LstmParams, steps, init: LstmState | None) -> list[Tensor]:
    state = init if init is not None else LstmState.zeros(seq.shape[0], params.hidden_size)
    hs = []
    for t in steps:
        state = lstm_cell_step(T.select(seq, t, axis=1), state, params)
        hs.append(state.h)
    return hs


def lstm_forward(seq, params: LstmParams, init: LstmState | None = None) -> Tensor:
    """Hidden states for every step, stacked to ``(batch, L, H)``."""
    seq = T.as_tensor(seq)
    _check_seq(seq, params)
    return T.stack(_run(seq, params, range(seq.shape[1]), init), axis=1)


def bilstm_forward(seq, params: BiLstmParams) -> Tensor:
    """``[forward_h_t, backward_h_t]`` per step, shape ``(batch, L, 2H)``."""
    seq = T.as_tensor(seq)
    _check_seq(seq, params.forward)
    steps = seq.shape[1]
    fwd = _run(seq, params.forward, range(steps), None)
    bwd = _run(seq, params.backward, range(steps - 1, -1, -1), None)[::-1]
    return T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)
