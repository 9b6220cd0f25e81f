import csv
import json

import numpy as np
import pytest

from msaconv import train
from msaconv.train import RunConfig

SMALL = dict(num_samples=32, batch_size=8, dtype="f64", checkpoint_every=0)


def _losses(path):
    with open(path) as fh:
        return {int(r["step"]): float(r["loss"]) for r in csv.DictReader(fh)}


def test_lr_zero_constant_loss(tmp_path):
    cfg = RunConfig(steps=6, lr=0.0, warmup_steps=0, num_samples=16, batch_size=16, dtype="f64", checkpoint_every=0)
    train.train(cfg, tmp_path)
    losses = list(_losses(tmp_path / "metrics.csv").values())
    assert len(losses) == 6 and max(losses) - min(losses) < 1e-12


def test_resume_matches_uninterrupted(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    full.mkdir()
    part.mkdir()
    cfg = RunConfig(steps=24, **{**SMALL, "checkpoint_every": 12})
    train.train(cfg, full)
    ckpt = full / "ckpt_step000012.zip"
    assert ckpt.exists()
    res = train.train(cfg.merged({"resume": str(ckpt)}), part)
    a, b = _losses(full / "metrics.csv"), _losses(part / "metrics.csv")
    assert sorted(b) == list(range(12, 24))
    assert all(abs(a[s] - b[s]) <= 1e-6 for s in b)
    assert res == json.loads((full / "summary.json").read_text())


def test_topk_ties():
    logits = np.zeros((4, 7))
    labels = np.array([0, 3, 5, 6])
    assert train.topk_hits(logits, labels, 1).tolist() == [True, False, False, False]
    assert train.topk_hits(logits, labels, 5).mean() == 0.5  # classes 0..4 win the tie
    assert train.topk_hits(np.zeros((3, 2)), np.array([0, 1, 1]), 5).all()
    assert train.topk_hits(np.array([[0.0, 2.0, 1.0]]), np.array([2]), 2).tolist() == [True]


def test_lr_schedule():
    cfg = RunConfig(steps=100, lr=1.0, warmup_steps=10)
    assert train.lr_at(cfg, 0) == pytest.approx(0.1)
    assert train.lr_at(cfg, 9) == pytest.approx(1.0)
    assert train.lr_at(cfg, 10) == pytest.approx(1.0)
    assert train.lr_at(cfg, 55) == pytest.approx(0.5)
    assert train.lr_at(cfg, 100) == pytest.approx(0.0, abs=1e-12)
    assert train.lr_at(cfg.merged({"schedule": "constant"}), 80) == 1.0
    with pytest.raises(ValueError):
        train.lr_at(cfg.merged({"schedule": "step"}), 50)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert train.clip_global_norm(g, 1.0) == pytest.approx(5.0)
    assert g["a"][0] == pytest.approx(0.6) and g["b"][0] == pytest.approx(0.8)
    g = {"a": np.array([0.1])}
    train.clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.1


def test_batch_indices_cover_epoch():
    seen = np.concatenate([train.batch_indices(s, 20, 5, 0) for s in range(4)])
    assert sorted(seen.tolist()) == list(range(20))
    assert np.array_equal(train.batch_indices(7, 20, 5, 0), train.batch_indices(7, 20, 5, 0))


def test_eval_matches_training_summary(tmp_path):
    cfg = RunConfig(steps=10, **SMALL)
    res = train.train(cfg, tmp_path)
    ev = train.evaluate(cfg, str(tmp_path / "final.zip"), tmp_path)
    assert abs(ev["top1"] - res["train"]["top1"]) <= 0.05
    assert json.loads((tmp_path / "eval.json").read_text()) == ev


def test_eval_class_mismatch(tmp_path):
    from msaconv import checkpoint
    from msaconv.model import TIC_TINY, init_model
    checkpoint.save(tmp_path / "m.zip", init_model(TIC_TINY), meta={})
    with pytest.raises(ValueError, match="class-count"):
        train.evaluate(RunConfig(num_samples=8), str(tmp_path / "m.zip"), tmp_path)


def test_config_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"steps": 3, "lr": 0.01}))
    cfg = RunConfig.from_file(tmp_path / "c.json")
    assert cfg.steps == 3 and cfg.lr == 0.01 and cfg.model == "tic-tiny"
    (tmp_path / "bad.json").write_text(json.dumps({"stepz": 3}))
    with pytest.raises(ValueError, match="stepz"):
        RunConfig.from_file(tmp_path / "bad.json")
    assert cfg.merged({"lr": None, "seed": 4}).seed == 4
