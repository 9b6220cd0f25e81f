"""Toy training and evaluation loops for TiC models."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint
from .data import Dataset, load
from .model import TicModel, ablate, init_model, named_configs, softmax_xent, tic_backward, tic_forward
from .optim import AdamState, adam_step, sgd_step
from .tensor import Tape

log = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Keys of a JSON config file map one-to-one onto these fields."""

    model: str = "tic-tiny"
    data: str = "synthetic"
    data_format: Optional[str] = None
    num_samples: int = 512
    image_size: int = 32
    num_classes: Optional[int] = None
    steps: int = 500
    batch_size: int = 32
    lr: float = 3e-4
    optimizer: str = "adam"
    warmup_steps: int = 25
    schedule: str = "cosine"
    weight_decay: float = 0.0
    clip_grad: Optional[float] = 1.0
    seed: int = 0
    dtype: str = "f32"
    checkpoint_every: int = 100
    eval_batch_size: int = 128
    out_dir: str = "out"
    threads: int = 1
    resume: Optional[str] = None
    checkpoint: Optional[str] = None
    without: list = field(default_factory=list)
    resolutions: list = field(default_factory=lambda: [224, 448, 896, 1024])

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def merged(self, overrides: dict) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_dataset(cfg: RunConfig) -> Dataset:
    return load(cfg.data, fmt=cfg.data_format, num_samples=cfg.num_samples, image_size=cfg.image_size,
                seed=cfg.seed, num_classes=cfg.num_classes)


def batch_indices(step: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    """Epoch-wise reshuffled batches, a pure function of ``step``."""
    per_epoch = max(1, n // batch_size)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


def lr_at(cfg: RunConfig, step: int) -> float:
    """Linear warmup, then constant or cosine decay to zero at ``cfg.steps``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule == "cosine":
        span = max(1, cfg.steps - cfg.warmup_steps)
        return 0.5 * cfg.lr * (1.0 + np.cos(np.pi * (step - cfg.warmup_steps) / span))
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``;
    returns the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total
    return total


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Label rank < k, ties broken in favour of the lower class index."""
    n, C = logits.shape
    own = logits[np.arange(n), labels][:, None]
    above = (logits > own).sum(axis=1)
    tied_before = ((logits == own) & (np.arange(C)[None, :] < labels[:, None])).sum(axis=1)
    return (above + tied_before) < k


def predict(model: TicModel, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    return np.concatenate([tic_forward(images[i:i + batch_size], model)
                           for i in range(0, len(images), batch_size)])


def accuracy(model: TicModel, ds: Dataset, batch_size: int = 128) -> dict:
    logits = predict(model, ds.images, batch_size)
    if logits.shape[1] != ds.num_classes:
        raise ValueError(f"model predicts {logits.shape[1]} classes, data has {ds.num_classes}")
    return {"top1": float(topk_hits(logits, ds.labels, 1).mean()),
            "top5": float(topk_hits(logits, ds.labels, 5).mean()),
            "n": int(len(ds))}


def train(cfg: RunConfig, out_dir: Path) -> dict:
    dtype = DTYPES[cfg.dtype]
    raw = load_dataset(cfg)
    start = 0
    adam = AdamState()
    if cfg.resume:
        model, manifest, saved_adam = checkpoint.load(cfg.resume)
        meta = manifest["meta"]
        ds = raw.normalized(meta["mean"], meta["std"], dtype)
        start = meta["step"]
        adam = saved_adam or AdamState()
    else:
        ds = raw.normalized(dtype=dtype)
        base = named_configs()[cfg.model]
        mcfg = ablate(dataclasses.replace(base, num_classes=raw.num_classes), cfg.without)
        model = init_model(mcfg, cfg.seed, dtype)
    params = model.named_parameters()
    meta = {"mean": ds.mean.tolist(), "std": ds.std.tolist(), "seed": cfg.seed, "step": start,
            "run": dataclasses.asdict(cfg)}

    metrics_path = out_dir / "metrics.csv"
    mode = "a" if cfg.resume and metrics_path.exists() else "w"
    with open(metrics_path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(["step", "loss", "batch_acc"])
        for step in range(start, cfg.steps):
            idx = batch_indices(step, len(ds), cfg.batch_size, cfg.seed)
            x, y = ds.images[idx], ds.labels[idx]
            tape = Tape()
            logits = tic_forward(x, model, tape, rng=np.random.default_rng([cfg.seed, step, 1]))
            loss, g = softmax_xent(logits, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")
            _, grads = tic_backward(g.astype(dtype), model, tape)
            if cfg.clip_grad:
                clip_global_norm(grads, cfg.clip_grad)
            lr = lr_at(cfg, step)
            if lr > 0:
                if cfg.optimizer == "adam":
                    adam_step(params, grads, adam, lr, weight_decay=cfg.weight_decay)
                elif cfg.optimizer == "sgd":
                    sgd_step(params, grads, lr, cfg.weight_decay)
                else:
                    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
            acc = float((logits.argmax(axis=1) == y).mean())
            w.writerow([step, repr(loss), repr(acc)])
            done = step + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.steps:
                meta["step"] = done
                checkpoint.save(out_dir / f"ckpt_step{done:06d}.zip", model, adam=adam, meta=meta)
            if step % 50 == 0:
                log.info("step %d loss %.4f acc %.3f", step, loss, acc)
    meta["step"] = cfg.steps
    checkpoint.save(out_dir / "final.zip", model, adam=adam, meta=meta)
    result = {"steps": cfg.steps, "train": accuracy(model, ds, cfg.eval_batch_size)}
    (out_dir / "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def evaluate(cfg: RunConfig, ckpt_path: str, out_dir: Path) -> dict:
    model, manifest, _ = checkpoint.load(ckpt_path)
    meta = manifest["meta"]
    raw = load_dataset(cfg)
    if raw.num_classes != model.config.num_classes:
        raise ValueError(f"class-count mismatch: checkpoint has {model.config.num_classes}, "
                         f"data has {raw.num_classes}")
    ds = raw.normalized(meta.get("mean"), meta.get("std"), model.dtype)
    result = accuracy(model, ds, cfg.eval_batch_size)
    (out_dir / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result
