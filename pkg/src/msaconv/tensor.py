"""Dense (B, C, H, W) primitives with explicit forward/backward pairs.

Tensors are plain ``numpy.ndarray`` objects in channel-first layout. Every
forward returns ``(out, saved)``; the matching backward consumes ``saved``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715
LN_EPS = 1e-5
INIT_STD = 0.02


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def check_tensor4(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name}: expected rank-4 (B, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise DimensionError(f"{name}: all dims must be >= 1, got {x.shape}")


@dataclass
class LinearParams:
    weight: np.ndarray  # (C_out, C_in)
    bias: Optional[np.ndarray] = None  # (C_out,)

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray

    def named(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def init_linear(rng: np.random.Generator, c_in: int, c_out: int, *, bias: bool = True,
                dtype=np.float32, std: float = INIT_STD) -> LinearParams:
    w = trunc_normal(rng, (c_out, c_in), std, dtype)
    b = np.zeros(c_out, dtype=dtype) if bias else None
    return LinearParams(w, b)


def init_layernorm(c: int, dtype=np.float32) -> LayerNormParams:
    return LayerNormParams(np.ones(c, dtype=dtype), np.zeros(c, dtype=dtype))


# -- linear ---------------------------------------------------------------

def linear_fwd(x: np.ndarray, p: LinearParams):
    check_tensor4(x)
    # a fixed memory layout keeps BLAS summation order, hence the bits, layout independent
    x = np.ascontiguousarray(x)
    B, C, H, W = x.shape
    if C != p.c_in:
        raise DimensionError(f"linear: input has {C} channels, weight expects {p.c_in}")
    out = np.matmul(p.weight, x.reshape(B, C, H * W))
    if p.bias is not None:
        out += p.bias[:, None]
    return out.reshape(B, p.c_out, H, W), (x, p)


def linear_bwd(grad_out: np.ndarray, saved):
    if saved is None or saved[0] is None:
        raise TapeError("linear_bwd: missing saved input")
    x, p = saved
    B, C, H, W = x.shape
    g = grad_out.reshape(B, p.c_out, H * W)
    xf = x.reshape(B, C, H * W)
    grad_x = np.matmul(p.weight.T, g).reshape(x.shape)
    grad_w = (g.transpose(1, 0, 2).reshape(p.c_out, -1)
              @ xf.transpose(1, 0, 2).reshape(C, -1).T)
    grad_b = g.sum(axis=(0, 2)) if p.bias is not None else None
    return grad_x, grad_w, grad_b


def linear_grads(grad_out: np.ndarray, saved) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """linear_bwd packaged as (grad_x, {"weight": .., "bias": ..})."""
    gx, gw, gb = linear_bwd(grad_out, saved)
    grads = {"weight": gw}
    if gb is not None:
        grads["bias"] = gb
    return gx, grads


# -- layernorm over channels ----------------------------------------------

def layernorm_fwd(x: np.ndarray, p: LayerNormParams, eps: float = LN_EPS):
    check_tensor4(x)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if p.gamma.shape != (x.shape[1],):
        raise DimensionError(f"layernorm: gamma length {p.gamma.shape} != C={x.shape[1]}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * p.gamma[None, :, None, None] + p.beta[None, :, None, None]
    return out, (xhat, rstd, p)


def layernorm_bwd(grad_out: np.ndarray, saved):
    xhat, rstd, p = saved
    gamma = p.gamma[None, :, None, None]
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    gx = grad_out * gamma
    grad_x = rstd * (gx - gx.mean(axis=1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=1, keepdims=True))
    return grad_x, grad_gamma, grad_beta


# -- GELU (tanh approximation) --------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gelu_fwd(x: np.ndarray):
    """0.5 x (1 + tanh(u)) evaluated as x * sigmoid(2u), which keeps full
    relative precision in the negative tail where 1 + tanh(u) cancels."""
    u = GELU_C * (x + GELU_A * (x * x * x))
    s = _sigmoid(2.0 * u).astype(x.dtype, copy=False)
    return x * s, (x, s)


def gelu_bwd(grad_out: np.ndarray, saved) -> np.ndarray:
    x, s = saved
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return grad_out * (s + 2.0 * x * s * (1.0 - s) * du)


# -- masked softmax over the last axis -------------------------------------

def softmax_lastdim_fwd(scores: np.ndarray, mask: Optional[np.ndarray] = None):
    """Softmax over the last axis restricted to slots where ``mask`` is True.

    ``mask`` broadcasts against ``scores``. Masked slots come out exactly 0.
    """
    if mask is not None:
        if not np.all(np.any(mask, axis=-1)):
            raise ValueError("softmax: a row has no valid slot")
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=-1, keepdims=True)
    return w, w


def softmax_lastdim_bwd(grad_out: np.ndarray, saved) -> np.ndarray:
    w = saved
    return w * (grad_out - (grad_out * w).sum(axis=-1, keepdims=True))


class Tape:
    """Stack of saved contexts; backward pops them in reverse execution order."""

    def __init__(self) -> None:
        self._records: list[tuple[str, Any]] = []

    def push(self, tag: str, saved: Any) -> None:
        self._records.append((tag, saved))

    def pop(self, tag: str) -> Any:
        if not self._records:
            raise TapeError(f"tape empty while expecting {tag!r}")
        got, saved = self._records.pop()
        if got != tag:
            raise TapeError(f"tape order violated: expected {tag!r}, found {got!r}")
        return saved

    def __len__(self) -> int:
        return len(self._records)

    @property
    def tags(self) -> list[str]:
        return [t for t, _ in self._records]
