"""Cyclic shift, inter-pooling of Q/K/V, patch embedding and patch downsampling."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import DimensionError, LinearParams, check_tensor4, linear_bwd, linear_fwd
from .windows import WindowSpec


class ConfigError(ValueError):
    pass


class Direction(enum.Enum):
    UP_LEFT = (-1, -1)
    UP_RIGHT = (-1, 1)
    DOWN_LEFT = (1, -1)
    DOWN_RIGHT = (1, 1)


ROUND_ROBIN = (Direction.UP_LEFT, Direction.UP_RIGHT, Direction.DOWN_LEFT, Direction.DOWN_RIGHT)


@dataclass(frozen=True)
class ShiftConfig:
    direction: Direction
    amount_h: int
    amount_w: int

    def signed(self) -> tuple[int, int]:
        sh, sw = self.direction.value
        return sh * self.amount_h, sw * self.amount_w

    def fit(self, H: int, W: int) -> "ShiftConfig":
        """Same direction with amounts reduced modulo the map dims."""
        return ShiftConfig(self.direction, self.amount_h % H, self.amount_w % W)


def _check_shift(x: np.ndarray, cfg: ShiftConfig) -> None:
    check_tensor4(x)
    _, _, H, W = x.shape
    if not (0 <= cfg.amount_h < H and 0 <= cfg.amount_w < W):
        raise ConfigError(f"shift amounts ({cfg.amount_h}, {cfg.amount_w}) illegal for a {H}x{W} map")


def cyclic_shift(x: np.ndarray, cfg: ShiftConfig) -> np.ndarray:
    _check_shift(x, cfg)
    return np.roll(x, cfg.signed(), axis=(2, 3))


def cyclic_unshift(x: np.ndarray, cfg: ShiftConfig) -> np.ndarray:
    _check_shift(x, cfg)
    sh, sw = cfg.signed()
    return np.roll(x, (-sh, -sw), axis=(2, 3))


def pick_shift(block_index: int, kernel: WindowSpec, seed: Optional[int] = None) -> ShiftConfig:
    """Half-window shift; direction round-robin by ``block_index`` or seeded."""
    if seed is None:
        direction = ROUND_ROBIN[block_index % 4]
    else:
        direction = ROUND_ROBIN[int(np.random.default_rng([seed, block_index]).integers(4))]
    return ShiftConfig(direction, kernel.span_h // 2, kernel.span_w // 2)


# -- inter-pooling ----------------------------------------------------------

@dataclass
class InterPool:
    """Pooling factor and the per-channel f x f aggregation kernels for K and V."""

    factor: int
    pool_k: np.ndarray  # (C, f, f)
    pool_v: np.ndarray  # (C, f, f)

    def __post_init__(self) -> None:
        f = self.factor
        if f < 1:
            raise ConfigError("pooling factor must be >= 1")
        if self.pool_k.shape[1:] != (f, f) or self.pool_v.shape[1:] != (f, f):
            raise ConfigError("pool kernels must be (C, f, f)")

    @classmethod
    def averaging(cls, channels: int, factor: int, dtype=np.float32) -> "InterPool":
        w = np.full((channels, factor, factor), 1.0 / factor ** 2, dtype=dtype)
        return cls(factor, w, w.copy())

    def named(self) -> dict[str, np.ndarray]:
        return {"pool_k": self.pool_k, "pool_v": self.pool_v}


def _check_divisible(x: np.ndarray, f: int) -> None:
    _, _, H, W = x.shape
    if H % f or W % f:
        raise ConfigError(f"pooling factor {f} does not divide map {H}x{W}")


def space_to_batch(x: np.ndarray, f: int) -> np.ndarray:
    """(B, C, H, W) -> (B*f*f, C, H/f, W/f); sub-map (p, q) is x[..., p::f, q::f]."""
    _check_divisible(x, f)
    B, C, H, W = x.shape
    y = x.reshape(B, C, H // f, f, W // f, f).transpose(0, 3, 5, 1, 2, 4)
    return np.ascontiguousarray(y).reshape(B * f * f, C, H // f, W // f)


def batch_to_space(x: np.ndarray, f: int) -> np.ndarray:
    Bf, C, h, w = x.shape
    if Bf % (f * f):
        raise DimensionError(f"batch {Bf} is not a multiple of f^2={f * f}")
    B = Bf // (f * f)
    y = x.reshape(B, f, f, C, h, w).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(y).reshape(B, C, h * f, w * f)


def strided_pool(x: np.ndarray, w: np.ndarray, f: int) -> np.ndarray:
    _check_divisible(x, f)
    B, C, H, W = x.shape
    return np.einsum("bcipjq,cpq->bcij", x.reshape(B, C, H // f, f, W // f, f), w)


def strided_pool_bwd(g: np.ndarray, x: np.ndarray, w: np.ndarray, f: int):
    B, C, H, W = x.shape
    gx = np.einsum("bcij,cpq->bcipjq", g, w).reshape(B, C, H, W)
    gw = np.einsum("bcipjq,bcij->cpq", x.reshape(B, C, H // f, f, W // f, f), g)
    return gx, gw


def inter_pool_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray, cfg: InterPool):
    f = cfg.factor
    if f == 1:
        return (q, k, v), (None, None, 1)
    for t in (q, k, v):
        _check_divisible(t, f)
    qp = space_to_batch(q, f)
    kp = np.repeat(strided_pool(k, cfg.pool_k, f), f * f, axis=0)
    vp = np.repeat(strided_pool(v, cfg.pool_v, f), f * f, axis=0)
    return (qp, kp, vp), (k, v, cfg)


def inter_pool_qkv_bwd(gq: np.ndarray, gk: np.ndarray, gv: np.ndarray, saved):
    """Returns (grad_q, grad_k, grad_v, grad_pool_k, grad_pool_v)."""
    k, v, cfg = saved
    if k is None:
        return gq, gk, gv, None, None
    f = cfg.factor
    B = k.shape[0]

    def unrepeat(g):
        return g.reshape(B, f * f, *g.shape[1:]).sum(axis=1)

    gq_ = batch_to_space(gq, f)
    gk_, gwk = strided_pool_bwd(unrepeat(gk), k, cfg.pool_k, f)
    gv_, gwv = strided_pool_bwd(unrepeat(gv), v, cfg.pool_v, f)
    return gq_, gk_, gv_, gwk, gwv


def inter_unpool(out: np.ndarray, cfg: InterPool, original_dims: tuple[int, int, int, int]) -> np.ndarray:
    f = cfg.factor
    B, C, H, W = original_dims
    if out.shape != (B * f * f, C, H // f, W // f):
        raise DimensionError(f"inter_unpool: got {out.shape}, expected {(B * f * f, C, H // f, W // f)}")
    if f == 1:
        return out
    return batch_to_space(out, f)


# -- patch embedding / downsampling --------------------------------------------

def _to_patches(img: np.ndarray, p: int) -> np.ndarray:
    B, C, H, W = img.shape
    if H % p or W % p:
        raise DimensionError(f"patch size {p} does not divide image {H}x{W}")
    y = img.reshape(B, C, H // p, p, W // p, p).transpose(0, 1, 3, 5, 2, 4)
    return y.reshape(B, C * p * p, H // p, W // p)


def _from_patches(g: np.ndarray, p: int, C: int) -> np.ndarray:
    B, _, h, w = g.shape
    y = g.reshape(B, C, p, p, h, w).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(B, C, h * p, w * p)


def patch_embed(img: np.ndarray, params: LinearParams, patch: int = 4):
    check_tensor4(img, "img")
    tokens = _to_patches(img, patch)
    out, lin = linear_fwd(tokens, params)
    return out, (lin, patch, img.shape[1])


def patch_embed_bwd(grad_out: np.ndarray, saved):
    lin, patch, C = saved
    gx, gw, gb = linear_bwd(grad_out, lin)
    return _from_patches(gx, patch, C), gw, gb


def _concat_2x2(x: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]], axis=1)


def patch_downsample(x: np.ndarray, params: LinearParams):
    """2x2 neighbour concat (TL, TR, BL, BR along channels), then 4C -> 2C."""
    check_tensor4(x)
    _, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"patch_downsample needs even dims, got {H}x{W}")
    if params.c_in != 4 * C:
        raise DimensionError(f"downsample weight expects {params.c_in} inputs, have 4*{C}")
    out, lin = linear_fwd(_concat_2x2(x), params)
    return out, (lin, x.shape)


def patch_downsample_bwd(grad_out: np.ndarray, saved):
    lin, shape = saved
    gcat, gw, gb = linear_bwd(grad_out, lin)
    C = shape[1]
    gx = np.empty(shape, dtype=gcat.dtype)
    gx[:, :, 0::2, 0::2] = gcat[:, 0:C]
    gx[:, :, 0::2, 1::2] = gcat[:, C:2 * C]
    gx[:, :, 1::2, 0::2] = gcat[:, 2 * C:3 * C]
    gx[:, :, 1::2, 1::2] = gcat[:, 3 * C:]
    return gx, gw, gb


def pad_to_multiple(x: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad bottom/right so H and W are multiples of ``m``."""
    _, _, H, W = x.shape
    ph, pw = (-H) % m, (-W) % m
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
