"""In-place SGD and Adam over a flat ``{name: array}`` parameter dict."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradError(FloatingPointError):
    pass


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradError(f"non-finite gradient in {name}")


def _check_shapes(params, grads) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if params[name].shape != g.shape:
            raise ValueError(f"{name}: param shape {params[name].shape} != grad shape {g.shape}")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             weight_decay: float = 0.0) -> None:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_shapes(params, grads)
    _check_finite(grads)
    for name, g in grads.items():
        p = params[name]
        if weight_decay:
            g = g + weight_decay * p
        p -= (lr * g).astype(p.dtype, copy=False)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """Adam with decoupled weight decay (AdamW when ``weight_decay > 0``)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_shapes(params, grads)
    _check_finite(grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + lr * weight_decay * p
        p -= update.astype(p.dtype, copy=False)
