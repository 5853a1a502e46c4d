"""Parameter store and the optimizer stack: Adam, cosine LR, EMA."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamStore:
    """Named parameters plus per-parameter Adam moments and an EMA shadow.

    One trainer owns a store; `step` counts Adam updates and is shared by
    every parameter.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.ema: dict[str, np.ndarray] | None = None
        self.step = 0

    def create(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Tensor(array, requires_grad=True)
        self.params[name] = p
        self.adam_m[name] = np.zeros_like(p.data)
        self.adam_v[name] = np.zeros_like(p.data)
        return p

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        return out

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def init_ema(self):
        if self.ema is None:
            self.ema = {name: p.data.copy() for name, p in self.params.items()}

    def ema_params(self) -> dict[str, np.ndarray]:
        self.init_ema()
        return self.ema

    def swap_in_ema(self):
        """Copy the EMA shadow into the live parameters (for inference)."""
        self.init_ema()
        for name, p in self.params.items():
            p.data[...] = self.ema[name]


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS):
    """Bias-corrected Adam update applied in place."""
    missing = set(store.params) - set(grads)
    if missing:
        raise KeyError(f"missing gradient for parameters: {sorted(missing)}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = grads[name]
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def cosine_lr(step: int, peak: float = 1e-4, warmup: int = 10_000,
              end: int = 2_500_000) -> float:
    """Linear warmup to `peak`, cosine decay to zero at `end`."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if step <= warmup:
        return peak * step / warmup
    if step >= end:
        return 0.0
    frac = (step - warmup) / (end - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


def ema_update(store: ParamStore, decay: float = 0.9999):
    """shadow <- decay * shadow + (1 - decay) * param, initialized lazily."""
    store.init_ema()
    for name, p in store.params.items():
        s = store.ema[name]
        s *= decay
        s += (1.0 - decay) * p.data
