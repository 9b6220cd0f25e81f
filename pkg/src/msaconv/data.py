"""Desk-scale datasets: CIFAR binary records, T4F image/label pairs, and a
seeded stripes-vs-checkers generator."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import t4f

CIFAR_RECORD = 1 + 3 * 32 * 32
SYNTH_PERIODS = (2, 3, 4, 5, 6, 8)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float
    labels: np.ndarray  # (N,) int64
    num_classes: int
    mean: Optional[np.ndarray] = None  # per channel
    std: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DataError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def normalized(self, mean=None, std=None, dtype=np.float32) -> "Dataset":
        """Per-channel standardization; statistics default to this dataset's own."""
        if mean is None:
            mean = self.images.mean(axis=(0, 2, 3), dtype=np.float64)
            std = self.images.std(axis=(0, 2, 3), dtype=np.float64) + 1e-8
        mean, std = np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)
        imgs = (self.images - mean[None, :, None, None]) / std[None, :, None, None]
        return Dataset(imgs.astype(dtype), self.labels, self.num_classes, mean, std)


def stripes_vs_checkers(n: int, size: int = 32, seed: int = 0, noise: float = 0.1,
                        periods: Sequence[int] = SYNTH_PERIODS) -> Dataset:
    """Class 0: horizontal or vertical stripes; class 1: checkerboard.

    Period, phase and the two colours are random per image; the colours
    always differ by at least 0.3 per channel.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    yy, xx = np.mgrid[0:size, 0:size]
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i, lab in enumerate(labels):
        period = int(rng.choice(periods))
        py, px = rng.integers(0, 2 * period, size=2)
        ry, rx = (yy + py) // period, (xx + px) // period
        if lab == 0:
            pattern = ry % 2 if rng.integers(2) else rx % 2
        else:
            pattern = (ry + rx) % 2
        c0 = rng.random(3) * 0.5
        c1 = c0 + 0.3 + rng.random(3) * 0.2
        if rng.integers(2):
            c0, c1 = c1, c0
        img = c0[:, None, None] * (1 - pattern) + c1[:, None, None] * pattern
        images[i] = img + noise * rng.standard_normal(img.shape)
    return Dataset(images, labels.astype(np.int64), 2)


def load_cifar_binary(path: Union[str, Path], num_classes: int = 10) -> Dataset:
    """Read 3073-byte records (label byte + R, G, B planes of 32x32) from a file
    or every ``*.bin`` file in a directory."""
    path = Path(path)
    files = sorted(path.glob("*.bin")) if path.is_dir() else [path]
    if not files:
        raise DataError(f"no CIFAR .bin files under {path}")
    chunks = []
    for f in files:
        try:
            raw = np.fromfile(f, dtype=np.uint8)
        except OSError as e:
            raise DataError(f"cannot read {f}: {e}") from e
        if raw.size % CIFAR_RECORD:
            raise DataError(f"{f}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
        chunks.append(raw.reshape(-1, CIFAR_RECORD))
    recs = np.concatenate(chunks)
    labels = recs[:, 0].astype(np.int64)
    images = recs[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels, num_classes)


def write_cifar_binary(path: Union[str, Path], images_u8: np.ndarray, labels: np.ndarray) -> None:
    recs = np.concatenate([labels.astype(np.uint8)[:, None], images_u8.reshape(len(labels), -1)], axis=1)
    recs.astype(np.uint8).tofile(path)


def load_t4f_pairs(stem: Union[str, Path], num_classes: Optional[int] = None) -> Dataset:
    """``<stem>.images.t4f`` (N, C, H, W) with ``<stem>.labels.t4f`` (N values)."""
    stem = str(stem)
    try:
        images = t4f.read(stem + ".images.t4f").astype(np.float32)
        labels = t4f.read(stem + ".labels.t4f").reshape(-1).astype(np.int64)
    except (OSError, t4f.T4FError) as e:
        raise DataError(f"cannot read T4F pair {stem}: {e}") from e
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(images, labels, num_classes)


def load(source: str, *, fmt: Optional[str] = None, num_samples: int = 512, image_size: int = 32,
         seed: int = 0, num_classes: Optional[int] = None) -> Dataset:
    if source == "synthetic":
        return stripes_vs_checkers(num_samples, image_size, seed)
    fmt = fmt or ("cifar" if source.endswith(".bin") or Path(source).is_dir() else "t4f")
    if fmt == "cifar":
        return load_cifar_binary(source, num_classes or 10)
    if fmt == "t4f":
        return load_t4f_pairs(source, num_classes)
    raise DataError(f"unknown data format {fmt!r}")
