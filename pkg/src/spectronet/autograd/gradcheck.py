from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def finite_difference_check(fn: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, step: float = 1e-4) -> float:
    """Largest relative disagreement between backprop and central differences.

    Per coordinate the error is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``fn`` must map a tensor to a scalar tensor and be deterministic.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    probe = Tensor(base.copy(), requires_grad=True)
    fn(probe).backward()
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad

    numeric = np.zeros_like(base)
    work = base.copy()
    flat, nflat = work.reshape(-1), numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn(Tensor(work.copy())).item()
        flat[k] = orig - step
        down = fn(Tensor(work.copy())).item()
        flat[k] = orig
        nflat[k] = (up - down) / (2 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
