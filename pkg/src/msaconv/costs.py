"""Analytic compute and activation-memory models for TiC, ViT and Swin.

Counting convention: every entry is a multiply-accumulate (MAC) count, the
same unit as the complexity formulas ``4hwC^2 + K^2 hwC`` (TiC),
``4hwC^2 + 2(hw)^2 C`` (ViT) and ``4hwC^2 + 2M^2 hwC`` (Swin), and the unit
behind the commonly quoted "GFLOPs" of these backbones. ``flops`` doubles it
(1 MAC = 2 FLOPs). Norms, softmax, GELU and residual adds are not counted.

For full models the attention stage counts both the score product and the
weighted sum, i.e. ``2 * sum_heads(slots * hw * head_dim)`` for TiC, matching
the ``2(hw)^2 C`` / ``2M^2 hwC`` terms of the baselines.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .model import TicConfig, build_head_plan

ARCHS = ("tic", "vit", "swin")


def attention_flops(arch: str, h: int, w: int, C: int, k_or_m: int) -> int:
    """Literal per-layer complexity formula for the three attention schemes."""
    hw = h * w
    proj = 4 * hw * C * C
    if arch == "tic":
        return proj + k_or_m ** 2 * hw * C
    if arch == "vit":
        return proj + 2 * hw * hw * C
    if arch == "swin":
        return proj + 2 * k_or_m ** 2 * hw * C
    raise ValueError(f"unknown arch {arch!r}; choose from {ARCHS}")


@dataclass(frozen=True)
class VitConfig:
    patch_size: int = 16
    dim: int = 768
    depth: int = 12
    heads: int = 12
    num_classes: int = 1000
    in_chans: int = 3
    name: str = "vit-b16"


@dataclass(frozen=True)
class SwinConfig:
    dims: tuple = (128, 256, 512, 1024)
    depths: tuple = (2, 2, 18, 2)
    heads: tuple = (4, 8, 16, 32)
    window: int = 7
    patch_size: int = 4
    num_classes: int = 1000
    in_chans: int = 3
    name: str = "swin-b"


VIT_B16 = VitConfig()
SWIN_B = SwinConfig()


@dataclass
class LayerCost:
    name: str
    attention: int = 0
    projection: int = 0
    mlp: int = 0
    other: int = 0

    @property
    def total(self) -> int:
        return self.attention + self.projection + self.mlp + self.other


@dataclass
class FlopsReport:
    arch: str
    resolution: tuple
    entries: list[LayerCost] = field(default_factory=list)

    @property
    def attention(self) -> int:
        return sum(e.attention for e in self.entries)

    @property
    def projection(self) -> int:
        return sum(e.projection for e in self.entries)

    @property
    def mlp(self) -> int:
        return sum(e.mlp for e in self.entries)

    @property
    def macs(self) -> int:
        return sum(e.total for e in self.entries)

    @property
    def flops(self) -> int:
        return 2 * self.macs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "attention_macs", "projection_macs", "mlp_macs", "other_macs", "total_macs"])
        for e in self.entries:
            w.writerow([e.name, e.attention, e.projection, e.mlp, e.other, e.total])
        w.writerow(["TOTAL", self.attention, self.projection, self.mlp,
                    sum(e.other for e in self.entries), self.macs])
        return buf.getvalue()

    def summary(self) -> str:
        H, W = self.resolution
        return (f"{self.arch} @ {H}x{W}: {self.macs / 1e9:.3f} GMACs "
                f"({self.flops / 1e9:.3f} GFLOPs at 2 FLOPs/MAC); attention {self.attention / 1e9:.3f} G, "
                f"projections {self.projection / 1e9:.3f} G, mlp {self.mlp / 1e9:.3f} G")


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def _tic_report(cfg: TicConfig, H: int, W: int) -> FlopsReport:
    rep = FlopsReport("tic", (H, W))
    p = cfg.patch_size
    h, w = _ceil(H, p), _ceil(W, p)
    C0 = cfg.stages[0].dim
    rep.entries.append(LayerCost("patch_embed", other=h * w * cfg.in_chans * p * p * C0))
    for i, st in enumerate(cfg.stages):
        C = st.dim
        if i > 0:
            h, w = _ceil(h, 2), _ceil(w, 2)
            rep.entries.append(LayerCost(f"stage{i}.downsample", other=h * w * (2 * C) * C))
        f = st.inter_pool_factor
        ah, aw = _ceil(h, f) * f, _ceil(w, f) * f  # attention runs on the f-padded map
        plan = build_head_plan(st)
        slots = sum(win.slots for win in plan.windows)
        for j in range(st.depth):
            pool = 2 * ah * aw * C if f > 1 else 0
            rep.entries.append(LayerCost(
                f"stage{i}.block{j}",
                attention=2 * slots * ah * aw * plan.head_dim,
                projection=4 * ah * aw * C * C,
                mlp=2 * h * w * C * 4 * C,
                other=pool,
            ))
    rep.entries.append(LayerCost("head", other=cfg.stages[-1].dim * cfg.num_classes))
    return rep


def _vit_report(cfg: VitConfig, H: int, W: int) -> FlopsReport:
    rep = FlopsReport("vit", (H, W))
    p, C = cfg.patch_size, cfg.dim
    hw = _ceil(H, p) * _ceil(W, p)
    rep.entries.append(LayerCost("patch_embed", other=hw * cfg.in_chans * p * p * C))
    for j in range(cfg.depth):
        rep.entries.append(LayerCost(f"block{j}", attention=2 * hw * hw * C, projection=4 * hw * C * C,
                                     mlp=8 * hw * C * C))
    rep.entries.append(LayerCost("head", other=C * cfg.num_classes))
    return rep


def _swin_report(cfg: SwinConfig, H: int, W: int) -> FlopsReport:
    rep = FlopsReport("swin", (H, W))
    p, M = cfg.patch_size, cfg.window
    h, w = _ceil(H, p), _ceil(W, p)
    rep.entries.append(LayerCost("patch_embed", other=h * w * cfg.in_chans * p * p * cfg.dims[0]))
    for i, (C, depth) in enumerate(zip(cfg.dims, cfg.depths)):
        if i > 0:
            h, w = _ceil(h, 2), _ceil(w, 2)
            rep.entries.append(LayerCost(f"stage{i}.downsample", other=h * w * (2 * C) * C))
        ph, pw = _ceil(h, M) * M, _ceil(w, M) * M  # windows need a multiple of M
        for j in range(depth):
            rep.entries.append(LayerCost(f"stage{i}.block{j}", attention=2 * M * M * ph * pw * C,
                                         projection=4 * ph * pw * C * C, mlp=8 * h * w * C * C))
    rep.entries.append(LayerCost("head", other=cfg.dims[-1] * cfg.num_classes))
    return rep


def model_flops(config, H: int, W: int) -> FlopsReport:
    if isinstance(config, TicConfig):
        return _tic_report(config, H, W)
    if isinstance(config, VitConfig):
        return _vit_report(config, H, W)
    if isinstance(config, SwinConfig):
        return _swin_report(config, H, W)
    raise TypeError(f"no cost model for {type(config).__name__}")


# -- activation memory ---------------------------------------------------------

@dataclass
class MemoryReport:
    arch: str
    resolution: tuple
    layers: list[tuple[str, int]] = field(default_factory=list)

    @property
    def peak(self) -> int:
        return max(n for _, n in self.layers)

    @property
    def peak_layer(self) -> str:
        return max(self.layers, key=lambda t: t[1])[0]


def _block_elems(tokens: int, attn_tokens: int, C: int, dot: int) -> int:
    # x, LN out, q, k, v, attention out, projected out, MLP hidden pre/post GELU, MLP out
    return tokens * C * 3 + attn_tokens * C * 4 + tokens * 4 * C * 2 + dot


def activation_memory(config, H: int, W: int, batch: int = 1) -> MemoryReport:
    """Elements live inside each block during a forward pass (batch ``batch``),
    including the saved attention weights. Peak is the largest block."""
    if isinstance(config, TicConfig):
        rep = MemoryReport("tic", (H, W))
        p = config.patch_size
        h, w = _ceil(H, p), _ceil(W, p)
        for i, st in enumerate(config.stages):
            if i > 0:
                h, w = _ceil(h, 2), _ceil(w, 2)
            f = st.inter_pool_factor
            at = (_ceil(h, f) * f) * (_ceil(w, f) * f)
            dot = sum(win.slots for win in build_head_plan(st).windows) * at
            for j in range(st.depth):
                rep.layers.append((f"stage{i}.block{j}", batch * _block_elems(h * w, at, st.dim, dot)))
        return rep
    if isinstance(config, VitConfig):
        rep = MemoryReport("vit", (H, W))
        hw = _ceil(H, config.patch_size) * _ceil(W, config.patch_size)
        for j in range(config.depth):
            rep.layers.append((f"block{j}", batch * _block_elems(hw, hw, config.dim, config.heads * hw * hw)))
        return rep
    if isinstance(config, SwinConfig):
        rep = MemoryReport("swin", (H, W))
        M = config.window
        h, w = _ceil(H, config.patch_size), _ceil(W, config.patch_size)
        for i, (C, depth, heads) in enumerate(zip(config.dims, config.depths, config.heads)):
            if i > 0:
                h, w = _ceil(h, 2), _ceil(w, 2)
            at = (_ceil(h, M) * M) * (_ceil(w, M) * M)
            for j in range(depth):
                rep.layers.append((f"stage{i}.block{j}", batch * _block_elems(h * w, at, C, heads * M * M * at)))
        return rep
    raise TypeError(f"no memory model for {type(config).__name__}")
