import numpy as np
import pytest
from hypothesis import given, strategies as st

from msaconv import costs
from msaconv.attention import MacCounter, init_msa_conv, reference_forward
from msaconv.model import TIC_B, TIC_TINY, ablate, build_head_plan


def test_formula_values():
    assert costs.attention_flops("tic", 56, 56, 128, 3) == 4 * 3136 * 16384 + 9 * 3136 * 128 == 209_133_568
    assert costs.attention_flops("vit", 56, 56, 128, 0) == 205_520_896 + 2 * 3136 ** 2 * 128
    assert costs.attention_flops("swin", 56, 56, 128, 7) == 205_520_896 + 2 * 49 * 3136 * 128
    with pytest.raises(ValueError):
        costs.attention_flops("cnn", 1, 1, 1, 1)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 256), st.integers(1, 7))
def test_formula_scaling(h, w, C, k):
    a = costs.attention_flops("tic", h, w, C, k)
    assert costs.attention_flops("tic", 2 * h, 2 * w, C, k) == 4 * a
    proj = 4 * h * w * C * C
    v1 = costs.attention_flops("vit", h, w, C, 0) - proj
    v2 = costs.attention_flops("vit", 2 * h, 2 * w, C, 0) - 4 * proj
    assert v2 == 16 * v1


def test_report_totals():
    for cfg in (TIC_B, TIC_TINY, costs.VIT_B16, costs.SWIN_B):
        rep = costs.model_flops(cfg, 224, 224)
        assert rep.macs == sum(e.total for e in rep.entries)
        assert rep.flops == 2 * rep.macs
        assert rep.attention + rep.projection + rep.mlp <= rep.macs
        assert rep.to_csv().splitlines()[-1].endswith(str(rep.macs))
    with pytest.raises(TypeError):
        costs.model_flops(object(), 224, 224)


def test_tic_b_table_value():
    macs = costs.model_flops(TIC_B, 224, 224).macs
    assert abs(macs - 15.5e9) / 15.5e9 < 0.25


def test_tic_attention_linear_in_area():
    a = costs.model_flops(ablate(TIC_B, ["interpool"]), 448, 448).attention
    b = costs.model_flops(ablate(TIC_B, ["interpool"]), 896, 896).attention
    assert b == 4 * a


def test_vit_quadratic_and_ratio():
    r = costs.model_flops(costs.VIT_B16, 1024, 1024).macs / costs.model_flops(TIC_B, 1024, 1024).macs
    assert 1.6 <= r <= 2.4


def test_memory():
    tic = [costs.activation_memory(TIC_B, r, r) for r in (224, 448, 896)]
    vit = [costs.activation_memory(costs.VIT_B16, r, r) for r in (224, 448, 896)]
    for a, b in zip(tic, tic[1:]):
        assert 3.5 <= b.peak / a.peak <= 4.5
    ratios = [t.peak / v.peak for t, v in zip(tic, vit)]
    assert ratios == sorted(ratios, reverse=True)
    # at 1024^2 the (4096)^2 per-head attention matrix dominates the ViT block
    v = costs.activation_memory(costs.VIT_B16, 1024, 1024)
    attn = costs.VIT_B16.heads * 4096 ** 2
    assert attn > v.peak / 2
    assert costs.activation_memory(TIC_B, 224, 224, batch=3).peak == 3 * tic[0].peak
    assert tic[0].peak_layer.startswith("stage0")


@pytest.mark.parametrize("stage", [0, 1, 2])
def test_counted_macs_match_model(stage):
    """The reference path's own multiply-accumulate tally equals the cost model's
    attention entry, pooled stages included (f^2 sub-maps of hw/f^2 queries each)."""
    st_cfg = TIC_B.stages[stage]
    h = 56 // 2 ** stage
    layer = init_msa_conv(np.random.default_rng(0), build_head_plan(st_cfg),
                          pool_factor=st_cfg.inter_pool_factor)
    counter = MacCounter()
    reference_forward(np.zeros((1, st_cfg.dim, h, h), np.float32), layer, counter)
    entry = next(e for e in costs.model_flops(TIC_B, 224, 224).entries if e.name == f"stage{stage}.block0")
    assert counter.total == entry.attention
    plan = build_head_plan(st_cfg)
    assert counter.qk == sum(w.slots for w in plan.windows) * h * h * plan.head_dim
