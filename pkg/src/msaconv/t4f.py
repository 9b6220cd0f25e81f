"""T4F raw tensor files.

Layout: 8-byte magic ``T4F\\0v001``, one dtype byte (0=f32, 1=f64), four
little-endian u32 dims (B, C, H, W), then B*C*H*W little-endian values.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

MAGIC = b"T4F\x00v001"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class T4FError(ValueError):
    pass


def as_tensor4(a: np.ndarray) -> np.ndarray:
    """Left-pad an array of rank <= 4 with unit dims."""
    a = np.asarray(a)
    if a.ndim > 4:
        raise T4FError(f"rank {a.ndim} does not fit in T4F")
    return a.reshape((1,) * (4 - a.ndim) + a.shape)


def dumps(a: np.ndarray) -> bytes:
    a = as_tensor4(a)
    code = _CODES.get(a.dtype)
    if code is None:
        raise T4FError(f"unsupported dtype {a.dtype}; T4F holds f32 or f64")
    header = MAGIC + struct.pack("<B4I", code, *a.shape)
    return header + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def loads(buf: bytes) -> np.ndarray:
    return read(io.BytesIO(buf))


def read(f: Union[BinaryIO, str, Path]) -> np.ndarray:
    if isinstance(f, (str, Path)):
        with open(f, "rb") as fh:
            return read(fh)
    head = f.read(8 + 1 + 16)
    if len(head) < 25 or head[:8] != MAGIC:
        raise T4FError("bad T4F magic")
    code, *dims = struct.unpack("<B4I", head[8:])
    if code not in _DTYPES:
        raise T4FError(f"bad T4F dtype code {code}")
    dt = _DTYPES[code]
    n = int(np.prod(dims))
    data = f.read(n * dt.itemsize)
    if len(data) != n * dt.itemsize:
        raise T4FError(f"truncated T4F payload: want {n} values")
    return np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def write(path: Union[str, Path], a: np.ndarray) -> None:
    Path(path).write_bytes(dumps(a))
