"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward, no_grad


def numerical_grad(f: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-5,
                   coords: Iterable[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of ``f`` at ``point`` for the given flat coordinates."""
    flat = point.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(list(coords), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise ContractError(f"grad_check coords must lie in [0, {flat.size})")
    out = np.empty(idx.size)
    with no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(point).item()
            flat[i] = orig - h
            fm = f(point).item()
            flat[i] = orig
            out[n] = (fp - fm) / (2.0 * h)
    return idx, out


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-5,
               coords: Iterable[int] | None = None) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` maps ``point`` to a scalar tensor. ``point`` must be float64 and is
    perturbed in place (restored afterwards). ``coords`` restricts the check
    to a subset of flat indices, e.g. one slice of a large weight.
    """
    if point.dtype != np.float64:
        raise ContractError("grad_check requires a float64 point")
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"grad_check step h={h} outside [1e-6, 1e-4]")
    saved_flag, saved_grad = point.requires_grad, point.grad
    point.requires_grad = True
    point.grad = None
    try:
        loss = f(point)
        backward(loss)
        analytic = point.grad.reshape(-1).copy()
        idx, numeric = numerical_grad(f, point, h, coords)
    finally:
        point.requires_grad = saved_flag
        point.grad = saved_grad
    a = analytic[idx]
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a)))) if idx.size else 0.0
