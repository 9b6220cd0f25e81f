"""Effective receptive fields: input-pixel saliency of one output token."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attention import MsaConvLayer, init_msa_conv, msa_conv_backward, msa_conv_forward
from .mechanisms import patch_embed, patch_embed_bwd
from .model import (ABLATIONS, StageConfig, TicConfig, TicModel, ablate, backward_features,
                    forward_features, init_model)
from .tensor import LinearParams, Tape, init_linear
from .windows import HeadPlan, WindowSpec


@dataclass
class ErfMap:
    grid: np.ndarray  # (H_img, W_img), max-normalized
    degenerate: bool = False

    def support(self) -> np.ndarray:
        return self.grid > 0

    def token_support(self, patch: int) -> np.ndarray:
        """Tokens whose patch holds any nonzero saliency."""
        H, W = self.grid.shape
        return self.support().reshape(H // patch, patch, W // patch, patch).any(axis=(1, 3))

    def to_pgm(self) -> bytes:
        H, W = self.grid.shape
        px = np.round(np.clip(self.grid, 0.0, 1.0) * 255).astype(np.uint8)
        return f"P5\n{W} {H}\n255\n".encode("ascii") + px.tobytes()

    def save(self, stem: Path) -> None:
        from . import t4f
        t4f.write(stem.with_suffix(".t4f"), self.grid.astype(np.float64))
        stem.with_suffix(".pgm").write_bytes(self.to_pgm())


class LayerStackProbe:
    """Patch embedding followed by bare MSA-Conv layers (no norm, no residual)."""

    def __init__(self, embed: LinearParams, layers: Sequence[MsaConvLayer], patch: int = 4) -> None:
        self.embed = embed
        self.layers = list(layers)
        self.patch = patch

    @classmethod
    def build(cls, specs: Sequence[WindowSpec], dim: int = 16, in_chans: int = 3, patch: int = 4,
              seed: int = 0) -> "LayerStackProbe":
        rng = np.random.default_rng(seed)
        embed = init_linear(rng, in_chans * patch * patch, dim, dtype=np.float64, std=0.2)
        layers = [init_msa_conv(rng, HeadPlan([s], dim), dtype=np.float64, std=0.2) for s in specs]
        return cls(embed, layers, patch)

    def forward(self, img: np.ndarray, tape: Tape) -> np.ndarray:
        x, s = patch_embed(img, self.embed, self.patch)
        tape.push("embed", s)
        for layer in self.layers:
            x, s = msa_conv_forward(x, layer)
            tape.push("msa_conv", s)
        return x

    def backward(self, grad: np.ndarray, tape: Tape) -> np.ndarray:
        for layer in reversed(self.layers):
            grad, _ = msa_conv_backward(grad, tape.pop("msa_conv"), layer)
        grad, _, _ = patch_embed_bwd(grad, tape.pop("embed"))
        return grad


class StageProbe:
    """A TiC model truncated after ``num_stages`` stages."""

    def __init__(self, model: TicModel, num_stages: int = 1) -> None:
        self.model = model
        self.num_stages = num_stages
        self.patch = model.config.patch_size * 2 ** (num_stages - 1)

    def forward(self, img: np.ndarray, tape: Tape) -> np.ndarray:
        return forward_features(img, self.model, tape, num_stages=self.num_stages)

    def backward(self, grad: np.ndarray, tape: Tape) -> np.ndarray:
        return backward_features(grad, self.model, tape, num_stages=self.num_stages)[0]


# Stage-1 probe: every mechanism switched on, map large enough that the
# center token never sees the border.
PROBE_STAGE = StageConfig(depth=2, dim=32, heads=4, kernel_size=3, dilation_ratio=4, depthwise_size=7,
                          inter_pool_factor=2)
PROBE_CONFIG = TicConfig(stages=(PROBE_STAGE, StageConfig(0, 64, 4), StageConfig(0, 128, 4), StageConfig(0, 256, 4)),
                         num_classes=2, name="erf-probe")
PROBE_IMAGE = 128
PROBE_INPUTS = 8


def variant_name(without) -> str:
    without = [w for w in ABLATIONS if w in set(without)]
    return "full" if not without else "no-" + "-".join(without)


def ablation_grid(without=(), grid: bool = False) -> list[tuple[str, ...]]:
    """Variants to map: the full model, the requested ablation, and with
    ``grid`` every single-mechanism ablation plus all-off."""
    out = [()]
    if grid:
        out += [(a,) for a in ABLATIONS] + [tuple(ABLATIONS)]
    if without and tuple(without) not in out:
        out.append(tuple(w for w in ABLATIONS if w in set(without)))
    return out


def model_erf(model: TicModel, *, num_stages: int = 1, image_size: int = PROBE_IMAGE,
              n_inputs: int = PROBE_INPUTS, seed: int = 0) -> ErfMap:
    imgs = random_inputs(n_inputs, image_size, model.config.in_chans, seed).astype(model.dtype)
    return erf_compute(StageProbe(model, num_stages), imgs)


def config_erf(config: TicConfig, without=(), *, seed: int = 0, **kw) -> ErfMap:
    """ERF of stage 1 of ``config`` with mechanisms removed, untrained f64 weights."""
    return model_erf(init_model(ablate(config, without), seed, np.float64), seed=seed, **kw)


def erf_compute(probe, inputs: np.ndarray, target: Optional[tuple[int, int]] = None) -> ErfMap:
    """Seed a unit gradient on every channel of the target token (default: the
    center), backpropagate to the pixels, average |grad| over batch and
    channels, normalize to max 1."""
    tape = Tape()
    y = probe.forward(inputs, tape)
    _, _, h, w = y.shape
    th, tw = target if target is not None else (h // 2, w // 2)
    seed = np.zeros_like(y)
    seed[:, :, th, tw] = 1.0
    g = probe.backward(seed, tape)
    sal = np.abs(g).mean(axis=(0, 1))
    top = sal.max()
    if top == 0:
        return ErfMap(sal, degenerate=True)
    return ErfMap(sal / top)


def analytic_footprint(specs: Sequence[Sequence[WindowSpec]], center: tuple[int, int],
                       size: tuple[int, int]) -> np.ndarray:
    """Boolean token mask reachable from ``center`` through stacked layers; each
    layer is the list of window specs of its heads."""
    reach = {center}
    for layer in reversed(list(specs)):
        offs = set().union(*(s.footprint() for s in layer))
        reach = {(y + dy, x + dx) for y, x in reach for dy, dx in offs
                 if 0 <= y + dy < size[0] and 0 <= x + dx < size[1]}
    mask = np.zeros(size, dtype=bool)
    for y, x in reach:
        mask[y, x] = True
    return mask


def random_inputs(n: int, size: int, in_chans: int = 3, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, in_chans, size, size))
