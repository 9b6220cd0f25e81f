"""Golden MSA-Conv fixtures built from closed-form (sin-based) weights and inputs,
so they do not depend on any random number generator.

Each case ``<name>`` is three T4F files: ``<name>.in.t4f`` (input),
``<name>.grad.t4f`` (output cotangent) and ``<name>.expected.t4f`` (the layer
output, or for ``*_bwd`` cases the input gradient).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import t4f
from .attention import MsaConvLayer, msa_conv_backward, msa_conv_forward
from .mechanisms import InterPool
from .tensor import LinearParams
from .windows import HeadPlan, WindowSpec


@dataclass(frozen=True)
class Case:
    name: str
    windows: tuple[str, ...]
    dim: int
    shape: tuple[int, int, int, int]
    factor: int = 1
    backward: bool = False


CASES = (
    Case("standard_3x3", ("3x3",), 4, (1, 4, 6, 6)),
    Case("dilated_pair", ("3x3", "3x3d2"), 8, (2, 8, 8, 8)),
    Case("depthwise_strip", ("7x7", "1x7"), 6, (1, 6, 7, 9)),
    Case("pooled_plan", ("5x5", "3x3d4", "3x3", "3x3"), 8, (1, 8, 10, 10), factor=2),
    Case("standard_3x3_bwd", ("3x3",), 4, (1, 4, 6, 6), backward=True),
    Case("pooled_plan_bwd", ("5x5", "3x3d4", "3x3", "3x3"), 8, (1, 8, 10, 10), factor=2, backward=True),
)


def _wave(shape, phase: float, scale: float = 1.0) -> np.ndarray:
    n = int(np.prod(shape))
    return (scale * np.sin(0.7 * np.arange(n) + phase)).reshape(shape)


def layer_for(case: Case) -> MsaConvLayer:
    C = case.dim
    s = C ** -0.5

    def lin(phase, bias=True):
        return LinearParams(_wave((C, C), phase, s), _wave((C,), phase + 0.5, 0.1) if bias else None)

    pool = None
    if case.factor > 1:
        f = case.factor
        pool = InterPool(f, (1.0 + 0.3 * _wave((C, f, f), 5.0)) / f ** 2, (1.0 + 0.3 * _wave((C, f, f), 6.0)) / f ** 2)
    return MsaConvLayer(lin(1.0), lin(2.0, bias=False), lin(3.0), lin(4.0),
                        HeadPlan([WindowSpec.parse(w) for w in case.windows], C), pool)


def inputs_for(case: Case) -> tuple[np.ndarray, np.ndarray]:
    return _wave(case.shape, 0.0), _wave(case.shape, 0.3)


def compute(case: Case) -> np.ndarray:
    layer = layer_for(case)
    x, g = inputs_for(case)
    out, saved = msa_conv_forward(x, layer)
    if not case.backward:
        return out
    return msa_conv_backward(g, saved, layer)[0]


def write_all(directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for case in CASES:
        x, g = inputs_for(case)
        for suffix, arr in (("in", x), ("grad", g), ("expected", compute(case))):
            path = directory / f"{case.name}.{suffix}.t4f"
            t4f.write(path, arr)
            written.append(path)
    return written
