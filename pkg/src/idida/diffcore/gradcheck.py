"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, backward


class NonDeterministicLoss(RuntimeError):
    pass


@dataclass
class ParamCheck:
    path: str
    max_rel_error: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def worst(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{'ok  ' if p.passed else 'FAIL'} {p.path:<32} max_rel_err={p.max_rel_error:.3e} n={p.checked}"
            for p in self.params
        ]


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    store: ParameterStore,
    loss_fn: Callable[[], Tensor],
    step: float = 1e-6,
    tolerance: float = 1e-4,
    *,
    max_elements: int = 200,
    seed: int = 0,
    floor: float = 1e-5,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    Tensors with more than ``max_elements`` entries are checked on a random
    subsample. ``analytic`` overrides the backward-pass gradients, which lets
    tests inject a corrupted gradient as a negative control.
    """
    base = loss_fn().item()
    again = loss_fn().item()
    if base != again:
        raise NonDeterministicLoss(f"loss_fn is not deterministic: {base!r} != {again!r}")

    if analytic is None:
        store.zero_grad()
        backward(loss_fn())
        analytic = {p: t.grad.copy() for p, t in store.items()}
        store.clear_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for path, t in store.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_elements else np.sort(rng.choice(n, max_elements, replace=False))
        ga = analytic[path].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(float(ga[i]), num, floor))
        report.params.append(ParamCheck(path, worst, int(idx.size), worst < tolerance))
    return report
