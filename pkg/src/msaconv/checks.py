"""Named gradient-check fixtures ("scopes") shared by the CLI and the tests.

Every scope is a small float64 problem: batch <= 2, channels <= 8, maps <= 9x9
for attention. Parameters are drawn at unit gain (weights ~ N(0, 1/fan_in),
biases and LN betas ~ 0.1 N, gammas ~ 1 + 0.1 N) so attention weights are far
from uniform and no gradient is vanishingly small.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import mechanisms as mech
from .attention import init_msa_conv, msa_conv_backward, msa_conv_forward
from .gradcheck import GradCheckReport, gradcheck
from .mechanisms import pick_shift
from .model import (StageConfig, block_backward, block_forward, build_head_plan, init_block,
                    TIC_TINY, init_model, tic_backward, tic_forward)
from .tensor import (Tape, gelu_bwd, gelu_fwd, init_layernorm, init_linear, layernorm_bwd,
                     layernorm_fwd, linear_bwd, linear_fwd, softmax_lastdim_bwd, softmax_lastdim_fwd)
from .windows import HeadPlan, WindowSpec

ATTENTION_SCOPES = ("msa_conv", "msa_conv_dilated", "msa_conv_depthwise", "msa_conv_shift_pool")
OP_SCOPES = ("linear", "layernorm", "gelu", "softmax", "patch_embed", "patch_downsample", "inter_pool")
COMPOSITE_SCOPES = ("block", "model")
SCOPES = OP_SCOPES + ATTENTION_SCOPES + COMPOSITE_SCOPES
GROUPS = {"attention": ATTENTION_SCOPES, "ops": OP_SCOPES, "all": SCOPES}

POINTWISE_TOL = 1e-6
ATTENTION_TOL = 1e-4


@dataclass
class Scope:
    name: str
    forward: Callable[[], np.ndarray]
    backward: Callable[[np.ndarray], dict]
    inputs: dict[str, np.ndarray]
    tol: float
    max_full: int = 10_000
    n_sample: int = 200

    def run(self, *, seed: int = 0, delta: float = 1e-7, only: Optional[list[str]] = None,
            corrupt: Optional[str] = None) -> GradCheckReport:
        """``corrupt`` sign-flips one analytic block; the oracle must catch it."""
        if corrupt is not None and corrupt not in self.inputs:
            raise KeyError(f"scope {self.name} has no block {corrupt!r}")

        def backward(cot):
            g = self.backward(cot)
            if corrupt is not None:
                g = dict(g)
                g[corrupt] = -g[corrupt]
            return g
        return gradcheck(self.forward, backward, self.inputs, delta=delta, tol=self.tol, seed=seed,
                         max_full=self.max_full, n_sample=self.n_sample, only=only)


def unit_gain(named: dict[str, np.ndarray], rng: np.random.Generator) -> None:
    """Overwrite parameters in place with well-conditioned random values."""
    for name, p in named.items():
        if name.endswith("gamma"):
            p[...] = 1.0 + 0.1 * rng.standard_normal(p.shape)
        elif name.endswith(("beta", "bias")):
            p[...] = 0.1 * rng.standard_normal(p.shape)
        elif name.endswith(("pool_k", "pool_v")):
            f = p.shape[-1]
            p[...] = (1.0 + 0.3 * rng.standard_normal(p.shape)) / f ** 2
        else:
            p[...] = rng.standard_normal(p.shape) / np.sqrt(p.shape[-1])


def _params(prefix: str, named: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": v for k, v in named.items()}


def _attention_scope(name: str, windows: list[WindowSpec], *, C: int = 8, H: int = 9, B: int = 2,
                     factor: int = 1, shift: bool = False, seed: int = 0) -> Scope:
    rng = np.random.default_rng(seed)
    layer = init_msa_conv(rng, HeadPlan(windows, C), pool_factor=factor, dtype=np.float64)
    unit_gain(layer.named(), rng)
    x = rng.standard_normal((B, C, H, H))
    sc = pick_shift(0, layer.plan.largest()).fit(H, H) if shift else None
    inputs = {"x": x, **_params("attn.", layer.named())}

    def forward():
        xs = mech.cyclic_shift(inputs["x"], sc) if sc else inputs["x"]
        out, _ = msa_conv_forward(xs, layer)
        return mech.cyclic_unshift(out, sc) if sc else out

    def backward(cot):
        xs = mech.cyclic_shift(inputs["x"], sc) if sc else inputs["x"]
        _, saved = msa_conv_forward(xs, layer)
        g = mech.cyclic_shift(cot, sc) if sc else cot
        gx, grads = msa_conv_backward(g, saved, layer)
        gx = mech.cyclic_unshift(gx, sc) if sc else gx
        return {"x": gx, **_params("attn.", grads)}

    return Scope(name, forward, backward, inputs, ATTENTION_TOL)


def _linear_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    p = init_linear(rng, 6, 5, dtype=np.float64)
    unit_gain(p.named(), rng)
    inputs = {"x": rng.standard_normal((2, 6, 3, 4)), **p.named()}

    def backward(cot):
        gx, gw, gb = linear_bwd(cot, linear_fwd(inputs["x"], p)[1])
        return {"x": gx, "weight": gw, "bias": gb}

    return Scope("linear", lambda: linear_fwd(inputs["x"], p)[0], backward, inputs, POINTWISE_TOL)


def _layernorm_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    p = init_layernorm(6, np.float64)
    unit_gain(p.named(), rng)
    inputs = {"x": rng.standard_normal((2, 6, 3, 4)), **p.named()}

    def backward(cot):
        gx, gg, gb = layernorm_bwd(cot, layernorm_fwd(inputs["x"], p)[1])
        return {"x": gx, "gamma": gg, "beta": gb}

    return Scope("layernorm", lambda: layernorm_fwd(inputs["x"], p)[0], backward, inputs, POINTWISE_TOL)


def _gelu_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    inputs = {"x": 2.0 * rng.standard_normal((2, 4, 5, 5))}
    return Scope("gelu", lambda: gelu_fwd(inputs["x"])[0],
                 lambda cot: {"x": gelu_bwd(cot, gelu_fwd(inputs["x"])[1])}, inputs, POINTWISE_TOL)


def _softmax_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    inputs = {"x": rng.standard_normal((2, 3, 4, 9))}
    mask = rng.random((4, 9)) > 0.3
    mask[:, 0] = True
    return Scope("softmax", lambda: softmax_lastdim_fwd(inputs["x"], mask)[0],
                 lambda cot: {"x": softmax_lastdim_bwd(cot, softmax_lastdim_fwd(inputs["x"], mask)[1])},
                 inputs, POINTWISE_TOL)


def _patch_embed_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    p = init_linear(rng, 3 * 16, 8, dtype=np.float64)
    unit_gain(p.named(), rng)
    inputs = {"x": rng.standard_normal((2, 3, 8, 12)), **p.named()}

    def backward(cot):
        gx, gw, gb = mech.patch_embed_bwd(cot, mech.patch_embed(inputs["x"], p)[1])
        return {"x": gx, "weight": gw, "bias": gb}

    return Scope("patch_embed", lambda: mech.patch_embed(inputs["x"], p)[0], backward, inputs, POINTWISE_TOL)


def _patch_downsample_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    p = init_linear(rng, 16, 8, dtype=np.float64)
    unit_gain(p.named(), rng)
    inputs = {"x": rng.standard_normal((2, 4, 6, 8)), **p.named()}

    def backward(cot):
        gx, gw, gb = mech.patch_downsample_bwd(cot, mech.patch_downsample(inputs["x"], p)[1])
        return {"x": gx, "weight": gw, "bias": gb}

    return Scope("patch_downsample", lambda: mech.patch_downsample(inputs["x"], p)[0], backward, inputs,
                 POINTWISE_TOL)


def _inter_pool_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    cfg = mech.InterPool.averaging(4, 2, np.float64)
    unit_gain(cfg.named(), rng)
    inputs = {n: rng.standard_normal((2, 4, 6, 6)) for n in ("q", "k", "v")}
    inputs.update(cfg.named())

    def forward():
        (q, k, v), _ = mech.inter_pool_qkv(inputs["q"], inputs["k"], inputs["v"], cfg)
        return np.concatenate([q, k, v], axis=1)

    def backward(cot):
        _, saved = mech.inter_pool_qkv(inputs["q"], inputs["k"], inputs["v"], cfg)
        gq, gk, gv = np.split(cot, 3, axis=1)
        gq, gk, gv, gpk, gpv = mech.inter_pool_qkv_bwd(gq, gk, gv, saved)
        return {"q": gq, "k": gk, "v": gv, "pool_k": gpk, "pool_v": gpv}

    return Scope("inter_pool", forward, backward, inputs, POINTWISE_TOL)


def _block_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    stage = StageConfig(depth=1, dim=8, heads=2, kernel_size=3, dilation_ratio=2, inter_pool_factor=2)
    blk = init_block(rng, stage, pick_shift(0, build_head_plan(stage).largest()), np.float64)
    unit_gain(blk.named(), rng)
    inputs = {"x": rng.standard_normal((2, 8, 9, 9)), **blk.named()}

    def backward(cot):
        tape = Tape()
        block_forward(inputs["x"], blk, tape)
        gx, grads = block_backward(cot, blk, tape)
        return {"x": gx, **grads}

    return Scope("block", lambda: block_forward(inputs["x"], blk, Tape()), backward, inputs, ATTENTION_TOL,
                 max_full=2_000, n_sample=60)


def _model_scope(seed: int) -> Scope:
    rng = np.random.default_rng(seed)
    model = init_model(TIC_TINY, seed, np.float64)
    unit_gain(model.named_parameters(), rng)
    inputs = {"img": rng.standard_normal((2, 3, 16, 16)), **model.named_parameters()}

    def backward(cot):
        tape = Tape()
        tic_forward(inputs["img"], model, tape)
        gimg, grads = tic_backward(cot, model, tape)
        return {"img": gimg, **grads}

    return Scope("model", lambda: tic_forward(inputs["img"], model), backward, inputs, ATTENTION_TOL,
                 max_full=0, n_sample=12)


_BUILDERS: dict[str, Callable[[int], Scope]] = {
    "linear": _linear_scope,
    "layernorm": _layernorm_scope,
    "gelu": _gelu_scope,
    "softmax": _softmax_scope,
    "patch_embed": _patch_embed_scope,
    "patch_downsample": _patch_downsample_scope,
    "inter_pool": _inter_pool_scope,
    "msa_conv": lambda s: _attention_scope("msa_conv", [WindowSpec.square(3)] * 2, seed=s),
    "msa_conv_dilated": lambda s: _attention_scope("msa_conv_dilated", [WindowSpec.square(3, 4)] * 2, seed=s),
    "msa_conv_depthwise": lambda s: _attention_scope(
        "msa_conv_depthwise", [WindowSpec.square(7), WindowSpec(1, 7)], seed=s),
    "msa_conv_shift_pool": lambda s: _attention_scope(
        "msa_conv_shift_pool", [WindowSpec.square(3), WindowSpec.square(3, 2)], factor=2, shift=True, seed=s),
    "block": _block_scope,
    "model": _model_scope,
}


def build_scope(name: str, seed: int = 0) -> Scope:
    if name not in _BUILDERS:
        raise KeyError(f"unknown gradcheck scope {name!r}; choose from {', '.join(SCOPES)} "
                       f"or a group ({', '.join(GROUPS)})")
    return _BUILDERS[name](seed)


def expand(names: list[str]) -> list[str]:
    out: list[str] = []
    for n in names:
        for s in GROUPS.get(n, (n,)):
            if s not in out:
                out.append(s)
    return out
