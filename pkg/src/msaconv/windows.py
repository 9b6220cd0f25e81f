"""Sliding-window geometry: kernel specs, per-head plans, and window gathering."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .tensor import DimensionError, check_tensor4

_SPEC_RE = re.compile(r"(?P<kh>\d+)(?:x(?P<kw>\d+))?(?:d(?P<dh>\d+)(?:,(?P<dw>\d+))?)?")


@dataclass(frozen=True)
class WindowSpec:
    """A center-anchored ``kernel_h x kernel_w`` window with per-axis dilation."""

    kernel_h: int
    kernel_w: int
    dilation_h: int = 1
    dilation_w: int = 1

    def __post_init__(self) -> None:
        for k in (self.kernel_h, self.kernel_w):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel extents must be positive and odd, got {self.kernel_h}x{self.kernel_w}")
        if self.dilation_h < 1 or self.dilation_w < 1:
            raise ValueError("dilation must be >= 1")

    @classmethod
    def square(cls, k: int, dilation: int = 1) -> "WindowSpec":
        return cls(k, k, dilation, dilation)

    @classmethod
    def parse(cls, text: str) -> "WindowSpec":
        """Inverse of ``str``: ``"3x3d4"``, ``"1x7"``, ``"5"``, ``"3x3d2,1"``."""
        m = _SPEC_RE.fullmatch(text.strip().lower())
        if m is None:
            raise ValueError(f"cannot parse window spec {text!r}; expected e.g. 3x3d4 or 1x7")
        kh = int(m["kh"])
        kw = int(m["kw"]) if m["kw"] else kh
        dh = int(m["dh"]) if m["dh"] else 1
        dw = int(m["dw"]) if m["dw"] else dh
        return cls(kh, kw, dh, dw)

    @property
    def slots(self) -> int:
        return self.kernel_h * self.kernel_w

    @property
    def span_h(self) -> int:
        return (self.kernel_h - 1) * self.dilation_h + 1

    @property
    def span_w(self) -> int:
        return (self.kernel_w - 1) * self.dilation_w + 1

    def offsets(self) -> Iterator[tuple[int, int]]:
        """(dy, dx) source offsets in slot order s = i * kernel_w + j."""
        ch, cw = self.kernel_h // 2, self.kernel_w // 2
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                yield (i - ch) * self.dilation_h, (j - cw) * self.dilation_w

    def footprint(self) -> set[tuple[int, int]]:
        return set(self.offsets())

    def __str__(self) -> str:
        d = f"d{self.dilation_h}" if self.dilation_h == self.dilation_w else f"d{self.dilation_h},{self.dilation_w}"
        return f"{self.kernel_h}x{self.kernel_w}{d}"


@dataclass(frozen=True)
class HeadPlan:
    windows: tuple[WindowSpec, ...]
    dim: int

    def __init__(self, windows: Sequence[WindowSpec], dim: int) -> None:
        windows = tuple(windows)
        if not windows:
            raise ValueError("head plan needs at least one head")
        if dim % len(windows):
            raise DimensionError(f"{len(windows)} heads do not divide C={dim}")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "dim", dim)

    @property
    def num_heads(self) -> int:
        return len(self.windows)

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def largest(self) -> WindowSpec:
        return max(self.windows, key=lambda w: (max(w.span_h, w.span_w), w.slots))

    def head_slice(self, m: int) -> slice:
        return slice(m * self.head_dim, (m + 1) * self.head_dim)


@dataclass
class WindowNeighborhood:
    values: np.ndarray  # (B, S, C, H, W)
    valid_mask: np.ndarray  # (S, H, W) bool


def _source_coords(spec: WindowSpec, H: int, W: int):
    offs = np.array(list(spec.offsets()))
    ys = np.arange(H)[None, :, None] + offs[:, 0, None, None]
    xs = np.arange(W)[None, None, :] + offs[:, 1, None, None]
    valid = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
    ys, xs = np.broadcast_arrays(np.clip(ys, 0, H - 1), np.clip(xs, 0, W - 1))
    return ys, xs, valid


def extract_windows(x: np.ndarray, spec: WindowSpec) -> WindowNeighborhood:
    """Gather every window slot for every position (stride 1, same size).

    Out-of-bounds slots hold zeros and are flagged invalid.
    """
    check_tensor4(x)
    _, _, H, W = x.shape
    ys, xs, valid = _source_coords(spec, H, W)
    vals = np.moveaxis(x[:, :, ys, xs], 2, 1)
    vals = np.where(valid[None, :, None], vals, 0).astype(x.dtype, copy=False)
    return WindowNeighborhood(vals, valid)


def fold_windows(values: np.ndarray, spec: WindowSpec, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of ``extract_windows``: scatter-add slot values to their sources."""
    _, _, H, W = shape
    ys, xs, valid = _source_coords(spec, H, W)
    vals = np.where(valid[None, :, None], values, 0)
    out = np.zeros(shape, dtype=values.dtype)
    np.add.at(out, (slice(None), slice(None), ys, xs), np.moveaxis(vals, 1, 2))
    return out
