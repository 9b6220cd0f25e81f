"""Hierarchical 4-stage TiC classifier built from MSA-Conv transformer blocks.

Token strides are 4, 8, 16, 32 relative to the (padded) image. Parameter keys
follow ``stage{i}.block{j}.{component}`` with zero-based ``i`` and ``j``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .attention import MsaConvLayer, init_msa_conv, msa_conv_backward, msa_conv_forward
from .mechanisms import (ShiftConfig, cyclic_shift, cyclic_unshift, pad_to_multiple, patch_downsample,
                         patch_downsample_bwd, patch_embed, patch_embed_bwd, pick_shift)
from .tensor import (DimensionError, LayerNormParams, LinearParams, Tape, gelu_bwd, gelu_fwd, init_layernorm,
                     init_linear, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd)
from .windows import HeadPlan, WindowSpec

MLP_RATIO = 4
# Classifier head init: small but nonzero. A zero head starves the body of
# gradient and leaves training on a plateau; 0.01 keeps untrained logits
# within 1% of maximal entropy.
HEAD_STD = 0.01
ABLATIONS = ("dilated", "depthwise", "shift", "interpool")


class NonFiniteActivationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class StageConfig:
    depth: int
    dim: int
    heads: int
    kernel_size: int = 3
    dilation_ratio: int = 1
    depthwise_size: int = 3
    inter_pool_factor: int = 1

    def __post_init__(self) -> None:
        if self.dim % self.heads:
            raise ValueError(f"heads={self.heads} must divide dim={self.dim}")
        if self.kernel_size % 2 == 0 or self.depthwise_size % 2 == 0:
            raise ValueError("kernel_size and depthwise_size must be odd")
        if self.dilation_ratio < 1 or self.inter_pool_factor < 1 or self.depth < 0:
            raise ValueError("dilation_ratio, inter_pool_factor must be >= 1 and depth >= 0")


@dataclass(frozen=True)
class TicConfig:
    stages: tuple[StageConfig, ...]
    num_classes: int = 1000
    patch_size: int = 4
    in_chans: int = 3
    drop_path: float = 0.0
    dropout: float = 0.0
    shift: bool = True
    shift_seed: Optional[int] = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if len(self.stages) != 4:
            raise ValueError("TiC has exactly four stages")
        dims = [s.dim for s in self.stages]
        if any(b != 2 * a for a, b in zip(dims, dims[1:])):
            raise ValueError(f"stage dims must double (C, 2C, 4C, 8C), got {dims}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TicConfig":
        d = dict(d)
        d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        return cls(**d)


def _stages(pool, kernel, dilation, depthwise, dims, heads, depths) -> tuple[StageConfig, ...]:
    return tuple(StageConfig(depth=dp, dim=dm, heads=h, kernel_size=kernel, dilation_ratio=dilation,
                             depthwise_size=dw, inter_pool_factor=f)
                 for f, dw, dm, h, dp in zip(pool, depthwise, dims, heads, depths))


TIC_B = TicConfig(
    stages=_stages((2, 2, 1, 1), 3, 4, (7, 7, 5, 5), (128, 256, 512, 1024), (4, 8, 16, 32), (2, 2, 18, 2)),
    num_classes=1000, name="tic-b")

TIC_TINY = TicConfig(
    stages=_stages((1, 1, 1, 1), 3, 2, (5, 5, 5, 5), (32, 64, 128, 256), (2, 2, 4, 4), (1, 1, 2, 1)),
    num_classes=10, name="tic-tiny")


def named_configs() -> dict[str, TicConfig]:
    return {"tic-b": TIC_B, "tic-tiny": TIC_TINY}


def ablate(config: TicConfig, without: Iterable[str]) -> TicConfig:
    """Switch off mechanisms: dilated head -> d=1, depthwise head -> kernel_size,
    shift -> none, interpool -> f=1."""
    without = set(without)
    unknown = without - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
    stages = []
    for s in config.stages:
        if "dilated" in without:
            s = dataclasses.replace(s, dilation_ratio=1)
        if "depthwise" in without:
            s = dataclasses.replace(s, depthwise_size=s.kernel_size)
        if "interpool" in without:
            s = dataclasses.replace(s, inter_pool_factor=1)
        stages.append(s)
    tag = "".join(f"-no{w}" for w in ABLATIONS if w in without)
    return dataclasses.replace(config, stages=tuple(stages), shift=config.shift and "shift" not in without,
                               name=config.name + tag)


def build_head_plan(stage: StageConfig) -> HeadPlan:
    k = WindowSpec.square(stage.kernel_size)
    dil = WindowSpec.square(stage.kernel_size, stage.dilation_ratio)
    if stage.heads == 1:
        windows = [k]
    elif stage.heads == 2:
        windows = [k, dil]
    else:
        windows = [WindowSpec.square(stage.depthwise_size), dil] + [k] * (stage.heads - 2)
    return HeadPlan(windows, stage.dim)


# -- parameters ---------------------------------------------------------------

@dataclass
class BlockState:
    norm1: LayerNormParams
    attn: MsaConvLayer
    norm2: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams
    shift: Optional[ShiftConfig] = None

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for comp in ("norm1", "attn", "norm2"):
            for k, v in getattr(self, comp).named().items():
                out[f"{comp}.{k}"] = v
        for comp in ("fc1", "fc2"):
            for k, v in getattr(self, comp).named().items():
                out[f"mlp.{comp}.{k}"] = v
        return out


@dataclass
class StageState:
    blocks: list[BlockState]
    downsample: Optional[LinearParams] = None


@dataclass
class TicModel:
    config: TicConfig
    patch_embed: LinearParams
    stages: list[StageState]
    head_norm: LayerNormParams
    head: LinearParams
    attn_impl: str = "direct"

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {f"patch_embed.{k}": v for k, v in self.patch_embed.named().items()}
        for i, st in enumerate(self.stages):
            if st.downsample is not None:
                out.update({f"stage{i}.downsample.{k}": v for k, v in st.downsample.named().items()})
            for j, blk in enumerate(st.blocks):
                out.update({f"stage{i}.block{j}.{k}": v for k, v in blk.named().items()})
        out.update({f"head.norm.{k}": v for k, v in self.head_norm.named().items()})
        out.update({f"head.fc.{k}": v for k, v in self.head.named().items()})
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    @property
    def dtype(self):
        return self.patch_embed.weight.dtype


def init_block(rng: np.random.Generator, stage: StageConfig, shift: Optional[ShiftConfig],
               dtype=np.float32, std: float = 0.02) -> BlockState:
    C = stage.dim
    return BlockState(
        norm1=init_layernorm(C, dtype),
        attn=init_msa_conv(rng, build_head_plan(stage), pool_factor=stage.inter_pool_factor, dtype=dtype, std=std),
        norm2=init_layernorm(C, dtype),
        fc1=init_linear(rng, C, MLP_RATIO * C, dtype=dtype, std=std),
        fc2=init_linear(rng, MLP_RATIO * C, C, dtype=dtype, std=std),
        shift=shift,
    )


def init_model(config: TicConfig, seed: int = 0, dtype=np.float32, std: float = 0.02) -> TicModel:
    """Shifted blocks are the odd-indexed ones in each stage; their directions
    cycle through the four diagonals in network order (or are seeded)."""
    rng = np.random.default_rng(seed)
    p = config.patch_size
    embed = init_linear(rng, config.in_chans * p * p, config.stages[0].dim, dtype=dtype, std=std)
    stages = []
    n_shifted = 0
    for i, sc in enumerate(config.stages):
        down = init_linear(rng, 2 * sc.dim, sc.dim, dtype=dtype, std=std) if i > 0 else None
        blocks = []
        for j in range(sc.depth):
            shift = None
            if config.shift and j % 2 == 1:
                shift = pick_shift(n_shifted, build_head_plan(sc).largest(), config.shift_seed)
                n_shifted += 1
            blocks.append(init_block(rng, sc, shift, dtype, std))
        stages.append(StageState(blocks, down))
    C = config.stages[-1].dim
    head = init_linear(rng, C, config.num_classes, dtype=dtype, std=HEAD_STD)
    return TicModel(config, embed, stages, init_layernorm(C, dtype), head)


# -- forward / backward -------------------------------------------------------

def _drop_mask(rng, shape, dropout: float, drop_path: float, dtype):
    if rng is None or (dropout == 0 and drop_path == 0):
        return None
    mask = np.ones(shape, dtype=dtype)
    if dropout > 0:
        mask *= (rng.random(shape) >= dropout) / (1.0 - dropout)
    if drop_path > 0:
        keep = rng.random((shape[0], 1, 1, 1)) >= drop_path
        mask *= keep / (1.0 - drop_path)
    return mask.astype(dtype)


def block_forward(x: np.ndarray, blk: BlockState, tape: Tape, *, impl: str = "direct",
                  rng: Optional[np.random.Generator] = None, dropout: float = 0.0, drop_path: float = 0.0):
    """y = x + S^-1 attn(LN1(S x)); z = y + MLP(LN2(y)). Returns z."""
    if x.shape[1] != blk.attn.dim:
        raise DimensionError(f"block expects {blk.attn.dim} channels, got {x.shape[1]}")
    _, _, H, W = x.shape
    sc = blk.shift.fit(H, W) if blk.shift is not None else None
    xs = cyclic_shift(x, sc) if sc is not None else x
    h, s_ln1 = layernorm_fwd(xs, blk.norm1)
    a, s_attn = msa_conv_forward(h, blk.attn, impl)
    if sc is not None:
        a = cyclic_unshift(a, sc)
    m1 = _drop_mask(rng, a.shape, dropout, drop_path, a.dtype)
    y = x + (a if m1 is None else a * m1)
    h2, s_ln2 = layernorm_fwd(y, blk.norm2)
    u, s_fc1 = linear_fwd(h2, blk.fc1)
    gu, s_gelu = gelu_fwd(u)
    m, s_fc2 = linear_fwd(gu, blk.fc2)
    m2 = _drop_mask(rng, m.shape, dropout, drop_path, m.dtype)
    z = y + (m if m2 is None else m * m2)
    tape.push("block", (sc, s_ln1, s_attn, m1, s_ln2, s_fc1, s_gelu, s_fc2, m2))
    return z


def block_backward(gz: np.ndarray, blk: BlockState, tape: Tape):
    sc, s_ln1, s_attn, m1, s_ln2, s_fc1, s_gelu, s_fc2, m2 = tape.pop("block")
    grads: dict[str, np.ndarray] = {}
    gm = gz if m2 is None else gz * m2
    ggu, grads["mlp.fc2.weight"], grads["mlp.fc2.bias"] = linear_bwd(gm, s_fc2)
    gu = gelu_bwd(ggu, s_gelu)
    gh2, grads["mlp.fc1.weight"], grads["mlp.fc1.bias"] = linear_bwd(gu, s_fc1)
    gy_ln, grads["norm2.gamma"], grads["norm2.beta"] = layernorm_bwd(gh2, s_ln2)
    gy = gz + gy_ln
    ga = gy if m1 is None else gy * m1
    if sc is not None:
        ga = cyclic_shift(ga, sc)
    gh, gattn = msa_conv_backward(ga, s_attn, blk.attn)
    grads.update({f"attn.{k}": v for k, v in gattn.items()})
    gxs, grads["norm1.gamma"], grads["norm1.beta"] = layernorm_bwd(gh, s_ln1)
    if sc is not None:
        gxs = cyclic_unshift(gxs, sc)
    return gy + gxs, grads


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteActivationError(f"non-finite activation after {where}")


def forward_features(img: np.ndarray, model: TicModel, tape: Tape, *, num_stages: int = 4,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Image -> token map after ``num_stages`` stages."""
    cfg = model.config
    if img.ndim != 4 or img.shape[1] != cfg.in_chans:
        raise DimensionError(f"expected (B, {cfg.in_chans}, H, W) image, got {img.shape}")
    if img.shape[2] < cfg.patch_size or img.shape[3] < cfg.patch_size:
        raise DimensionError(f"image smaller than patch size {cfg.patch_size}")
    tape.push("pad", img.shape)
    x, s = patch_embed(pad_to_multiple(img, cfg.patch_size), model.patch_embed, cfg.patch_size)
    tape.push("embed", s)
    _check_finite(x, "patch_embed")
    for i, st in enumerate(model.stages[:num_stages]):
        if st.downsample is not None:
            tape.push("pad", x.shape)
            x, s = patch_downsample(pad_to_multiple(x, 2), st.downsample)
            tape.push("downsample", s)
            _check_finite(x, f"stage{i}.downsample")
        for j, blk in enumerate(st.blocks):
            x = block_forward(x, blk, tape, impl=model.attn_impl, rng=rng,
                              dropout=cfg.dropout, drop_path=cfg.drop_path)
            _check_finite(x, f"stage{i}.block{j}")
    return x


def backward_features(grad: np.ndarray, model: TicModel, tape: Tape, *, num_stages: int = 4):
    """Returns (grad_img, grads) for ``forward_features``."""
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(num_stages)):
        st = model.stages[i]
        for j in reversed(range(len(st.blocks))):
            grad, g = block_backward(grad, st.blocks[j], tape)
            grads.update({f"stage{i}.block{j}.{k}": v for k, v in g.items()})
        if st.downsample is not None:
            grad, gw, gb = patch_downsample_bwd(grad, tape.pop("downsample"))
            grads[f"stage{i}.downsample.weight"], grads[f"stage{i}.downsample.bias"] = gw, gb
            shape = tape.pop("pad")
            grad = grad[:, :, :shape[2], :shape[3]]
    grad, gw, gb = patch_embed_bwd(grad, tape.pop("embed"))
    grads["patch_embed.weight"], grads["patch_embed.bias"] = gw, gb
    shape = tape.pop("pad")
    return grad[:, :, :shape[2], :shape[3]], grads


def tic_forward(img: np.ndarray, model: TicModel, tape: Optional[Tape] = None,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Logits (B, num_classes). Pass ``rng`` to enable dropout / drop-path."""
    tape = Tape() if tape is None else tape
    x = forward_features(img, model, tape, rng=rng)
    tape.push("gap", x.shape)
    pooled = x.mean(axis=(2, 3), keepdims=True)
    h, s_ln = layernorm_fwd(pooled, model.head_norm)
    logits, s_fc = linear_fwd(h, model.head)
    tape.push("head", (s_ln, s_fc))
    _check_finite(logits, "head")
    return logits[:, :, 0, 0]


def tic_backward(grad_logits: np.ndarray, model: TicModel, tape: Tape):
    """Returns (grad_img, grads keyed like ``model.named_parameters()``)."""
    s_ln, s_fc = tape.pop("head")
    grads: dict[str, np.ndarray] = {}
    g = grad_logits[:, :, None, None]
    g, grads["head.fc.weight"], grads["head.fc.bias"] = linear_bwd(g, s_fc)
    g, grads["head.norm.gamma"], grads["head.norm.beta"] = layernorm_bwd(g, s_ln)
    shape = tape.pop("gap")
    g = np.broadcast_to(g / (shape[2] * shape[3]), shape).copy()
    gimg, gf = backward_features(g, model, tape)
    grads.update(gf)
    return gimg, grads


def stage_shapes(model_or_config, H: int, W: int) -> list[tuple[int, int]]:
    """Token-map (h, w) per stage for an H x W image, including internal padding."""
    cfg = model_or_config.config if isinstance(model_or_config, TicModel) else model_or_config
    p = cfg.patch_size
    h, w = -(-H // p), -(-W // p)
    out = [(h, w)]
    for _ in range(3):
        h, w = -(-h // 2), -(-w // 2)
        out.append((h, w))
    return out


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
