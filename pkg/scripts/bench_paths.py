"""Time the direct (slot-loop) and reference (gather + einsum) attention paths
on a stage-1-sized layer. Reports only; nothing is asserted."""
import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from msaconv.attention import init_msa_conv, msa_conv_backward, msa_conv_forward
from msaconv.model import TIC_B, build_head_plan


def bench(impl: str, x: np.ndarray, layer, repeats: int) -> tuple[float, float]:
    fwd, bwd = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        y, saved = msa_conv_forward(x, layer, impl)
        t1 = time.perf_counter()
        msa_conv_backward(np.ones_like(y), saved, layer)
        fwd.append(t1 - t0)
        bwd.append(time.perf_counter() - t1)
    return min(fwd) * 1e3, min(bwd) * 1e3


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=56)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    args = ap.parse_args()
    dtype = np.float32 if args.dtype == "f32" else np.float64
    stage = TIC_B.stages[0]
    layer = init_msa_conv(np.random.default_rng(0), build_head_plan(stage), pool_factor=stage.inter_pool_factor,
                          dtype=dtype)
    x = np.random.default_rng(1).standard_normal((1, stage.dim, args.size, args.size)).astype(dtype)
    with threadpool_limits(limits=1):
        for impl in ("direct", "reference"):
            f, b = bench(impl, x, layer, args.repeats)
            print(f"{impl:9s} C={stage.dim} {args.size}x{args.size}: forward {f:8.1f} ms  backward {b:8.1f} ms")


if __name__ == "__main__":
    main()
