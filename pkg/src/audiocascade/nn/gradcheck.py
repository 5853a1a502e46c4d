"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class GradCheckError(Exception):
    pass


def grad_check(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued `fn` against central
    differences, perturbing every element of every input.

    Inputs must be float64 tensors with requires_grad set. Returns the max
    relative error over all elements.
    """
    for inp in inputs:
        if inp.data.dtype != np.float64:
            raise GradCheckError("grad_check requires float64 inputs")
        inp.grad = None

    out = fn()
    out.backward()
    analytic = []
    for inp in inputs:
        g = inp.grad if inp.grad is not None else np.zeros_like(inp.data)
        if not np.all(np.isfinite(g)):
            raise GradCheckError("non-finite analytic gradient")
        analytic.append(g.copy())
        inp.grad = None

    worst = 0.0
    for inp, g in zip(inputs, analytic):
        flat = inp.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(fn().data)
            flat[j] = orig - h
            f_minus = float(fn().data)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = g.reshape(-1)[j]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
