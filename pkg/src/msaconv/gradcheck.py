"""Central-difference gradient oracle.

``forward()`` reads the arrays in ``inputs`` (which the checker perturbs in
place) and returns an output array. ``backward(cot)`` returns analytic
gradients of ``sum(cot * forward())`` keyed like ``inputs``.

For a vector-valued op the derivative along one input coordinate is a whole
Jacobian column. The checker sketches that column with ``n_cot`` random
cotangents: the numeric side is
``sum(cot_k * (f(x + delta) - f(x - delta))) / ((x + delta) - (x - delta))``
and the analytic side is ``backward(cot_k)`` at that coordinate. Relative
error compares the two length-``n_cot`` vectors by Euclidean norm, so a
single cotangent that happens to cancel cannot fake a near-zero gradient.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DELTA = 1e-7
REL_FLOOR = 1e-8
FULL_SWEEP_MAX = 10_000
SUBSAMPLE = 200
N_COT = 4


class InvalidOracleError(RuntimeError):
    pass


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


@dataclass
class BlockResult:
    name: str
    max_rel_err: float
    argmax: tuple
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    @property
    def worst(self) -> Optional[BlockResult]:
        return max(self.blocks, key=lambda b: b.max_rel_err, default=None)

    @property
    def passed(self) -> bool:
        return all(b.max_rel_err < self.tol for b in self.blocks)

    def failures(self) -> list[BlockResult]:
        return [b for b in self.blocks if not b.max_rel_err < self.tol]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "checked", "max_rel_err", "argmax", "analytic", "numeric", "pass"])
        for b in self.blocks:
            w.writerow([b.name, b.checked, f"{b.max_rel_err:.3e}", "-".join(map(str, b.argmax)),
                        repr(b.analytic), repr(b.numeric), int(b.max_rel_err < self.tol)])
        return buf.getvalue()

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = self.worst
        where = f" (worst: {worst.name}{list(worst.argmax)})" if worst else ""
        return f"gradcheck {status}: {len(self.blocks)} blocks, max rel err {self.max_rel_err:.3e} vs tol {self.tol:g}{where}"


def _flat_grad(grads: dict, name: str, arr: np.ndarray) -> np.ndarray:
    g = grads.get(name)
    if g is None:
        return np.zeros(arr.size)
    if g.shape != arr.shape:
        raise InvalidOracleError(f"{name}: analytic gradient {g.shape} != input {arr.shape}")
    return g.reshape(-1)


def _coords(arr: np.ndarray, rng: np.random.Generator, max_full: int, n_sample: int):
    if arr.size <= max_full:
        return range(arr.size)
    return np.sort(rng.choice(arr.size, size=min(n_sample, arr.size), replace=False))


def gradcheck(forward: Callable[[], np.ndarray], backward: Callable[[np.ndarray], dict],
              inputs: dict[str, np.ndarray], *, delta: float = DELTA, tol: float = 1e-4,
              seed: int = 0, max_full: int = FULL_SWEEP_MAX, n_sample: int = SUBSAMPLE,
              only: Optional[list[str]] = None, n_cot: int = N_COT) -> GradCheckReport:
    for name, a in inputs.items():
        if a.dtype != np.float64:
            raise InvalidOracleError(f"{name}: gradcheck needs float64 inputs, got {a.dtype}")
    y0 = forward()
    if not np.array_equal(y0, forward()):
        raise InvalidOracleError("forward is not deterministic")
    if n_cot < 1:
        raise ValueError("n_cot must be >= 1")
    rng = np.random.default_rng(seed)
    cots = rng.standard_normal((n_cot,) + y0.shape)
    analytic = [backward(c) for c in cots]
    report = GradCheckReport(tol)
    for name, arr in inputs.items():
        if only is not None and name not in only:
            continue
        ga = np.stack([_flat_grad(a, name, arr) for a in analytic])
        flat = arr.reshape(-1)
        worst = (-1.0, (), 0.0, 0.0)
        n = 0
        for i in _coords(arr, rng, max_full, n_sample):
            orig = flat[i]
            xp, xm = orig + delta, orig - delta
            flat[i] = xp
            yp = forward()
            flat[i] = xm
            ym = forward()
            flat[i] = orig
            num = (cots.reshape(n_cot, -1) @ (yp - ym).reshape(-1)) / (xp - xm)
            ana = ga[:, i]
            e = float(np.linalg.norm(ana - num)
                      / max(np.linalg.norm(ana), np.linalg.norm(num), REL_FLOOR))
            n += 1
            if e > worst[0]:
                worst = (e, np.unravel_index(i, arr.shape), float(ana[0]), float(num[0]))
        e, idx, ana, num = worst
        report.blocks.append(BlockResult(name, max(e, 0.0), tuple(int(t) for t in idx), ana, num, n))
    return report
