"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .layers import Layer
from .models import Model


SCALE_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    tolerance: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"grad check {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_error:.3e}, tol {self.tolerance:.0e})"]
        lines += [f"  {name}: {err:.3e}" for name, err in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """Largest elementwise gap scaled by the tensor's largest gradient magnitude.

    Tensors whose gradients are all below ``floor`` (e.g. a shift that a later
    batchnorm cancels) are scaled by ``floor`` instead.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _numeric(f, arr: np.ndarray, idx, step: float) -> np.ndarray:
    out = np.zeros(len(idx))
    flat = arr.reshape(-1)
    for n, i in enumerate(idx):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        out[n] = (plus - minus) / (2 * h)
    return out


def grad_check(
    target,
    input_shape: Tuple[int, ...],
    tolerance: float = 1e-4,
    seed: int = 0,
    step: float = 1e-5,
    max_checks: Optional[int] = None,
    x: Optional[np.ndarray] = None,
) -> GradCheckReport:
    """Compare backward() of a layer (or model body) with finite differences.

    The scalar objective is ``sum(out * R)`` for a fixed random ``R``, run in
    training mode. ``max_checks`` samples that many coordinates per tensor.
    """
    layer: Layer = target.body if isinstance(target, Model) else target
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.standard_normal(input_shape)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, train=True)
    proj = rng.standard_normal(out.shape)

    def objective():
        return float(np.sum(layer.forward(x, train=True) * proj))

    layer.forward(x, train=True)
    dx = layer.backward(proj)
    analytic = {"input": dx.copy()}
    tensors = {"input": x}
    for name, sub, key in layer.named_parameters():
        analytic[name] = sub.grads[key].copy()
        tensors[name] = sub.params[key]

    report = GradCheckReport(tolerance)
    for name, arr in tensors.items():
        size = arr.size
        if max_checks is not None and size > max_checks:
            idx = np.sort(rng.choice(size, max_checks, replace=False))
        else:
            idx = np.arange(size)
        num = _numeric(objective, arr, idx, step)
        report.errors[name] = relative_error(analytic[name].reshape(-1)[idx], num)
    return report
