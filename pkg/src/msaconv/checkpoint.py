"""Single-file checkpoints: a zip archive holding ``manifest.json`` plus one T4F
blob per tensor.

Blob names are ``param/<key>.t4f`` for model parameters (keys as in
``TicModel.named_parameters()``, e.g. ``stage2.block1.attn.proj_q.weight``),
and ``adam.m/<key>.t4f`` / ``adam.v/<key>.t4f`` for optimizer moments. The
manifest records the model config, each tensor's original shape, the
optimizer step, and any run metadata (normalization constants, seed, ...).
"""
from __future__ import annotations

import json
import zipfile
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import t4f
from .model import TicConfig, TicModel, init_model
from .optim import AdamState

FORMAT = "msaconv-ckpt/1"


class CheckpointError(ValueError):
    pass


def save(path: Union[str, Path], model: TicModel, *, adam: Optional[AdamState] = None,
         meta: Optional[dict] = None) -> None:
    params = model.named_parameters()
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "dtype": str(model.dtype),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "adam_step": adam.step if adam is not None else None,
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for k, v in params.items():
            zf.writestr(f"param/{k}.t4f", t4f.dumps(v))
        if adam is not None:
            for k in params:
                if k in adam.m:
                    zf.writestr(f"adam.m/{k}.t4f", t4f.dumps(adam.m[k]))
                    zf.writestr(f"adam.v/{k}.t4f", t4f.dumps(adam.v[k]))


def load(path: Union[str, Path]) -> tuple[TicModel, dict, Optional[AdamState]]:
    """Returns (model, manifest, adam_state_or_None)."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
        config = TicConfig.from_dict(manifest["config"])
        model = init_model(config, dtype=np.dtype(manifest["dtype"]))
        names = set(zf.namelist())
        for k, p in model.named_parameters().items():
            blob = f"param/{k}.t4f"
            if blob not in names:
                raise CheckpointError(f"checkpoint lacks parameter {k}")
            p[...] = t4f.loads(zf.read(blob)).reshape(manifest["shapes"][k])
        adam = None
        if manifest.get("adam_step") is not None:
            adam = AdamState(step=manifest["adam_step"])
            for k, p in model.named_parameters().items():
                if f"adam.m/{k}.t4f" in names:
                    adam.m[k] = t4f.loads(zf.read(f"adam.m/{k}.t4f")).reshape(p.shape).astype(p.dtype)
                    adam.v[k] = t4f.loads(zf.read(f"adam.v/{k}.t4f")).reshape(p.shape).astype(p.dtype)
    return model, manifest, adam
