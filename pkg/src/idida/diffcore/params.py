"""Named parameter storage with deterministic (lexicographic) iteration."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for p in self.paths():
            yield p, self._params[p]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def clear_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Copy of all parameter values."""
        return {p: t.data.copy() for p, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter paths differ: {sorted(missing)}")
        for p, t in self._params.items():
            v = np.asarray(state[p], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"{p}: shape {v.shape} does not match {t.shape}")
            t.data = np.ascontiguousarray(v.copy())


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
