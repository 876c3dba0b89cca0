"""Central finite-difference oracle for reverse-mode gradients.

The oracle only ever evaluates the forward function on plain values; it never
touches the backward closures, so it stays independent of what it checks.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, backward

# Denominator floor for the elementwise relative error.  Below this gradient
# magnitude the comparison degrades gracefully into an absolute one.
REL_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of ``f`` with respect to ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def check_function(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-4,
) -> float:
    """Max relative error between backward and central differences.

    ``fn`` receives one Tensor per input and must return a scalar Tensor.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(fn(*leaves))
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        num = numeric_gradient(lambda: fn(*[Tensor(a) for a in arrays]).item(), arr, eps)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, relative_error(ana, num))
    return worst


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-4,
) -> dict[str, float]:
    """Per-parameter relative error for a closure over live parameter tensors.

    ``loss_fn`` must be deterministic: it is re-run for every perturbation.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    errors = {}
    for name, p in params.items():
        num = numeric_gradient(lambda: loss_fn().item(), p.data, eps)
        ana = p.grad if p.grad is not None else np.zeros_like(p.data)
        errors[name] = relative_error(ana, num)
    return errors
