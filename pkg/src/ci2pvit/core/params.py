"""Named parameter registry, initializers and the Adam optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from ..errors import ContractError
from .rng import Rng
from .tensor import Tensor, get_default_dtype


@dataclass
class ParamEntry:
    tensor: Tensor
    frozen: bool = False
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None


class ParamStore:
    """Ordered map from dotted names to parameters.

    Frozen entries have ``requires_grad`` off, carry no Adam slots and are
    never touched by ``adam_step``. A tensor may be registered in several
    stores (the classifier borrows the codec encoder's tensors).
    """

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, value, frozen: bool = False) -> Tensor:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name '{name}'")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=get_default_dtype())
        t.name = t.name or name
        self._entries[name] = entry = ParamEntry(t)
        self._set_frozen(entry, frozen)
        return t

    def _set_frozen(self, entry: ParamEntry, frozen: bool) -> None:
        entry.frozen = frozen
        entry.tensor.requires_grad = not frozen
        if frozen:
            entry.adam_m = entry.adam_v = None
        elif entry.adam_m is None:
            entry.adam_m = np.zeros_like(entry.tensor.data)
            entry.adam_v = np.zeros_like(entry.tensor.data)

    def freeze(self, prefix: str = "") -> None:
        for name, e in self._entries.items():
            if name.startswith(prefix):
                self._set_frozen(e, True)

    def unfreeze(self, prefix: str = "") -> None:
        for name, e in self._entries.items():
            if name.startswith(prefix):
                self._set_frozen(e, False)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def items(self):
        return ((n, e.tensor) for n, e in self._entries.items())

    def entries(self):
        return self._entries.items()

    def is_frozen(self, name: str) -> bool:
        return self._entries[name].frozen

    def num_elements(self, trainable_only: bool = False) -> int:
        return sum(e.tensor.size for e in self._entries.values() if not (trainable_only and e.frozen))

    def grad(self, name: str) -> np.ndarray:
        """Gradient of a parameter, zeros if it never received one."""
        t = self._entries[name].tensor
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: e.tensor.data.copy() for n, e in self._entries.items() if n.startswith(prefix)}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in by name; shapes must match exactly."""
        missing = [n for n in self._entries if n not in state]
        if strict and missing:
            raise ContractError(f"state is missing parameters: {missing[:5]}")
        for name, e in self._entries.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != e.tensor.shape:
                raise ContractError(f"shape mismatch for '{name}': {value.shape} vs {e.tensor.shape}")
            e.tensor.data[...] = value

    def to_dtype(self, dtype) -> None:
        for e in self._entries.values():
            e.tensor.data = e.tensor.data.astype(dtype)
            if e.adam_m is not None:
                e.adam_m = e.adam_m.astype(dtype)
                e.adam_v = e.adam_v.astype(dtype)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1) -> None:
    """One bias-corrected Adam update of every trainable parameter, then clear all grads."""
    if t < 1:
        raise ContractError(f"adam_step needs t >= 1, got {t}")
    for name, e in store.entries():
        if e.frozen:
            continue
        if e.tensor.grad is None:
            raise ContractError(f"adam_step: parameter '{name}' has no gradient")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for _, e in store.entries():
        if not e.frozen:
            g = e.tensor.grad
            e.adam_m *= beta1
            e.adam_m += (1.0 - beta1) * g
            e.adam_v *= beta2
            e.adam_v += (1.0 - beta2) * g * g
            m_hat = e.adam_m / c1
            v_hat = e.adam_v / c2
            e.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(e.tensor.dtype)
        e.tensor.grad = None


# -- initializers -----------------------------------------------------------

def trunc_normal(rng: Rng, shape, std: float = 0.02) -> np.ndarray:
    return rng.trunc_normal(std, shape, dtype=get_default_dtype())


def kaiming_uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    """He-uniform with fan-in scaling: U(-b, b), b = sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape, dtype=get_default_dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=get_default_dtype())


def ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=get_default_dtype())
