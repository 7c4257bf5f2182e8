from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import DimensionError, Tensor


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``fn(*inputs)`` to central differences.

    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over every
    coordinate of every input that requires a gradient.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.value.size != 1:
        raise DimensionError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, g in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        if g is None:
            g = np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn(*inputs).value)
            flat[i] = orig - eps
            down = float(fn(*inputs).value)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst
