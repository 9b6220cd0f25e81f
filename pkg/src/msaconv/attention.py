"""Multi-head self-attention evaluated inside a sliding window.

Each head attends over its own ``WindowSpec`` (any odd kernel, any dilation)
around every position, stride 1, same output size. Window slots that fall
outside the map are masked out of the softmax rather than zero-padded into it.

Two interchangeable paths compute the same thing:

* ``direct``: loops over window slots and works on shifted slices of the
  un-gathered Q/K/V maps, never materializing the windows.
* ``reference``: gathers every window with ``extract_windows`` and contracts
  with einsum; its backward scatters through ``fold_windows``. Slow, kept as
  the correctness oracle for ``direct``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mechanisms import InterPool, inter_pool_qkv, inter_pool_qkv_bwd, inter_unpool, pad_to_multiple, space_to_batch
from .tensor import (DimensionError, LinearParams, TapeError, check_tensor4, init_linear, linear_bwd,
                     linear_fwd, softmax_lastdim_bwd, softmax_lastdim_fwd)
from .windows import HeadPlan, WindowSpec, extract_windows, fold_windows

IMPLS = ("direct", "reference")


@dataclass
class MsaConvLayer:
    proj_q: LinearParams
    proj_k: LinearParams
    proj_v: LinearParams
    proj_out: LinearParams
    plan: HeadPlan
    pool: Optional[InterPool] = None

    def __post_init__(self) -> None:
        C = self.plan.dim
        for name in ("proj_q", "proj_k", "proj_v", "proj_out"):
            p = getattr(self, name)
            if p.weight.shape != (C, C):
                raise DimensionError(f"{name} must be {C}x{C}, got {p.weight.shape}")

    @property
    def dim(self) -> int:
        return self.plan.dim

    @property
    def scale(self) -> float:
        return self.plan.head_dim ** -0.5

    @property
    def factor(self) -> int:
        return 1 if self.pool is None else self.pool.factor

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("proj_q", "proj_k", "proj_v", "proj_out"):
            for k, v in getattr(self, name).named().items():
                out[f"{name}.{k}"] = v
        if self.pool is not None and self.pool.factor > 1:
            out.update(self.pool.named())
        return out


def init_msa_conv(rng: np.random.Generator, plan: HeadPlan, *, pool_factor: int = 1,
                  dtype=np.float32, std: float = 0.02) -> MsaConvLayer:
    """Truncated-normal projections. The key projection carries no bias: a key
    bias shifts every slot's score by the same q.b and cancels in the softmax."""
    C = plan.dim
    pool = InterPool.averaging(C, pool_factor, dtype) if pool_factor > 1 else None
    return MsaConvLayer(
        proj_q=init_linear(rng, C, C, dtype=dtype, std=std),
        proj_k=init_linear(rng, C, C, bias=False, dtype=dtype, std=std),
        proj_v=init_linear(rng, C, C, dtype=dtype, std=std),
        proj_out=init_linear(rng, C, C, dtype=dtype, std=std),
        plan=plan,
        pool=pool,
    )


# -- per-head kernels ---------------------------------------------------------

class MacCounter:
    """Multiply-accumulate tally for the attention stage of the reference path."""

    def __init__(self) -> None:
        self.qk = 0
        self.dv = 0

    @property
    def total(self) -> int:
        return self.qk + self.dv


def _regions(H: int, W: int, dy: int, dx: int):
    h0, h1 = max(0, -dy), min(H, H - dy)
    w0, w1 = max(0, -dx), min(W, W - dx)
    if h0 >= h1 or w0 >= w1:
        return None
    return (slice(None), slice(None), slice(h0, h1), slice(w0, w1)), \
        (slice(None), slice(None), slice(h0 + dy, h1 + dy), slice(w0 + dx, w1 + dx))


def _masked_softmax_slots(scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Softmax over axis 1 of (B, S, H, W) with a (S, H, W) validity mask."""
    w, _ = softmax_lastdim_fwd(np.moveaxis(scores, 1, -1), np.moveaxis(valid, 0, -1))
    return np.moveaxis(w, -1, 1)


def _softmax_slots_bwd(grad: np.ndarray, dot: np.ndarray) -> np.ndarray:
    return np.moveaxis(softmax_lastdim_bwd(np.moveaxis(grad, 1, -1), np.moveaxis(dot, 1, -1)), -1, 1)


def attend_direct(q, k, v, spec: WindowSpec, scale: float):
    B, D, H, W = q.shape
    scores = np.full((B, spec.slots, H, W), -np.inf, dtype=q.dtype)
    valid = np.zeros((spec.slots, H, W), dtype=bool)
    regions = []
    for s, (dy, dx) in enumerate(spec.offsets()):
        r = _regions(H, W, dy, dx)
        regions.append(r)
        if r is None:
            continue
        dst, src = r
        scores[:, s][dst[:1] + dst[2:]] = (q[dst] * k[src]).sum(axis=1) * scale
        valid[s][dst[2:]] = True
    dot = _masked_softmax_slots(scores, valid)
    out = np.zeros_like(v)
    for s, r in enumerate(regions):
        if r is None:
            continue
        dst, src = r
        out[dst] += dot[:, s, None][dst] * v[src]
    return out, dot


def attend_direct_bwd(g, q, k, v, dot, spec: WindowSpec, scale: float):
    B, D, H, W = q.shape
    dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    ddot = np.zeros_like(dot)
    regions = [_regions(H, W, dy, dx) for dy, dx in spec.offsets()]
    for s, r in enumerate(regions):
        if r is None:
            continue
        dst, src = r
        ddot[:, s][dst[:1] + dst[2:]] = (g[dst] * v[src]).sum(axis=1)
        dv[src] += dot[:, s, None][dst] * g[dst]
    dscores = _softmax_slots_bwd(ddot, dot) * scale
    for s, r in enumerate(regions):
        if r is None:
            continue
        dst, src = r
        ds = dscores[:, s, None][dst]
        dq[dst] += ds * k[src]
        dk[src] += ds * q[dst]
    return dq, dk, dv


def attend_reference(q, k, v, spec: WindowSpec, scale: float, counter: Optional[MacCounter] = None):
    kw = extract_windows(k, spec)
    vw = extract_windows(v, spec)
    scores = np.einsum("bchw,bschw->bshw", q, kw.values) * scale
    dot = _masked_softmax_slots(scores, kw.valid_mask)
    out = np.einsum("bshw,bschw->bchw", dot, vw.values)
    if counter is not None:
        B, D, H, W = q.shape
        counter.qk += B * spec.slots * D * H * W
        counter.dv += B * spec.slots * D * H * W
    return out, dot


def attend_reference_bwd(g, q, k, v, dot, spec: WindowSpec, scale: float):
    kw = extract_windows(k, spec).values
    vw = extract_windows(v, spec).values
    ddot = np.einsum("bchw,bschw->bshw", g, vw)
    dvw = np.einsum("bshw,bchw->bschw", dot, g)
    dscores = _softmax_slots_bwd(ddot, dot) * scale
    dq = np.einsum("bshw,bschw->bchw", dscores, kw)
    dkw = np.einsum("bshw,bchw->bschw", dscores, q)
    return dq, fold_windows(dkw, spec, k.shape), fold_windows(dvw, spec, v.shape)


_FWD = {"direct": attend_direct, "reference": attend_reference}
_BWD = {"direct": attend_direct_bwd, "reference": attend_reference_bwd}


# -- full layer ---------------------------------------------------------------

@dataclass
class SavedAttention:
    layer: MsaConvLayer
    impl: str
    in_shape: tuple
    lin_q: tuple
    lin_k: tuple
    lin_v: tuple
    lin_out: tuple
    pool_saved: tuple
    heads: list = field(default_factory=list)  # (q, k, v, dot) per head
    consumed: bool = False


def msa_conv_forward(x: np.ndarray, layer: MsaConvLayer, impl: str = "direct",
                     counter: Optional[MacCounter] = None):
    """Returns ``(out, saved)``; ``out`` has the same dims as ``x``."""
    check_tensor4(x)
    if x.shape[1] != layer.dim:
        raise DimensionError(f"msa_conv: input has {x.shape[1]} channels, layer expects {layer.dim}")
    if impl not in IMPLS:
        raise ValueError(f"unknown impl {impl!r}")
    B, C, H, W = x.shape
    f = layer.factor
    xp = pad_to_multiple(x, f)
    q, lin_q = linear_fwd(xp, layer.proj_q)
    k, lin_k = linear_fwd(xp, layer.proj_k)
    v, lin_v = linear_fwd(xp, layer.proj_v)
    if f > 1:
        (q, k, v), pool_saved = inter_pool_qkv(q, k, v, layer.pool)
    else:
        pool_saved = (None, None, 1)
    attn = _FWD[impl]
    outs, heads = [], []
    for m, spec in enumerate(layer.plan.windows):
        sl = layer.plan.head_slice(m)
        qm, km, vm = q[:, sl], k[:, sl], v[:, sl]
        if impl == "reference":
            om, dot = attn(qm, km, vm, spec, layer.scale, counter)
        else:
            om, dot = attn(qm, km, vm, spec, layer.scale)
        outs.append(om)
        heads.append((qm, km, vm, dot))
    o = np.concatenate(outs, axis=1)
    if f > 1:
        o = inter_unpool(o, layer.pool, xp.shape)
    out, lin_out = linear_fwd(o, layer.proj_out)
    out = out[:, :, :H, :W]
    saved = SavedAttention(layer, impl, x.shape, lin_q, lin_k, lin_v, lin_out, pool_saved, heads)
    return out, saved


def msa_conv_backward(grad_out: np.ndarray, saved: SavedAttention, layer: MsaConvLayer):
    """Returns ``(grad_x, grads)`` with ``grads`` keyed like ``layer.named()``."""
    if saved.layer is not layer:
        raise TapeError("saved attention state belongs to a different layer")
    if saved.consumed:
        raise TapeError("saved attention state already consumed by a backward pass")
    if grad_out.shape != saved.in_shape:
        raise DimensionError(f"grad_out {grad_out.shape} != forward output {saved.in_shape}")
    saved.consumed = True
    B, C, H, W = saved.in_shape
    f = layer.factor
    g = pad_to_multiple(grad_out, f)
    grads: dict[str, np.ndarray] = {}
    go, gw, gb = linear_bwd(g, saved.lin_out)
    grads["proj_out.weight"], grads["proj_out.bias"] = gw, gb
    if f > 1:
        go = space_to_batch(go, f)
    bwd = _BWD[saved.impl]
    dq, dk, dv = [], [], []
    for m, spec in enumerate(layer.plan.windows):
        qm, km, vm, dot = saved.heads[m]
        a, b, c = bwd(go[:, layer.plan.head_slice(m)], qm, km, vm, dot, spec, layer.scale)
        dq.append(a)
        dk.append(b)
        dv.append(c)
    dq, dk, dv = (np.concatenate(t, axis=1) for t in (dq, dk, dv))
    if f > 1:
        dq, dk, dv, gpk, gpv = inter_pool_qkv_bwd(dq, dk, dv, saved.pool_saved)
        grads["pool_k"], grads["pool_v"] = gpk, gpv
    gx = np.zeros_like(g)
    for name, gt, lin in (("proj_q", dq, saved.lin_q), ("proj_k", dk, saved.lin_k), ("proj_v", dv, saved.lin_v)):
        gxi, gw, gb = linear_bwd(gt, lin)
        gx += gxi
        grads[f"{name}.weight"] = gw
        if gb is not None:
            grads[f"{name}.bias"] = gb
    return gx[:, :, :H, :W], grads


def reference_forward(x: np.ndarray, layer: MsaConvLayer, counter: Optional[MacCounter] = None):
    return msa_conv_forward(x, layer, impl="reference", counter=counter)


def reference_backward(grad_out: np.ndarray, saved: SavedAttention, layer: MsaConvLayer):
    if saved.impl != "reference":
        raise TapeError("reference_backward needs state saved by reference_forward")
    return msa_conv_backward(grad_out, saved, layer)
