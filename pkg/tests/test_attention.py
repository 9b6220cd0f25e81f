import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msaconv import checks
from msaconv.attention import (MacCounter, init_msa_conv, msa_conv_backward, msa_conv_forward, reference_backward,
                               reference_forward)
from msaconv.tensor import DimensionError, LinearParams, TapeError
from msaconv.windows import HeadPlan, WindowSpec, extract_windows

TWO_HEADS = HeadPlan([WindowSpec.square(3), WindowSpec.square(3, 2)], 8)


def _layer(plan=TWO_HEADS, seed=0, dtype=np.float64, std=0.5, **kw):
    return init_msa_conv(np.random.default_rng(seed), plan, dtype=dtype, std=std, **kw)


def _proj(p: LinearParams, x):
    y = np.einsum("oc,bchw->bohw", p.weight, x)
    return y if p.bias is None else y + p.bias[:, None, None]


def test_constant_values_convexity():
    layer = _layer()
    x = np.random.default_rng(1).standard_normal((2, 8, 6, 7))
    # proj_v with zero weight makes V = bias, a spatially constant map
    layer.proj_v.weight[:] = 0
    out, _ = msa_conv_forward(x, layer)
    want = layer.proj_out.weight @ layer.proj_v.bias + layer.proj_out.bias
    np.testing.assert_allclose(out, np.broadcast_to(want[None, :, None, None], out.shape), rtol=1e-12, atol=1e-12)


def test_zero_scores_windowed_mean():
    layer = _layer()
    layer.proj_q.weight[:] = 0
    layer.proj_q.bias[:] = 0
    x = np.random.default_rng(2).standard_normal((1, 8, 5, 6))
    out, _ = msa_conv_forward(x, layer)
    v = _proj(layer.proj_v, x)
    heads = []
    for m, spec in enumerate(TWO_HEADS.windows):
        nb = extract_windows(v[:, TWO_HEADS.head_slice(m)], spec)
        heads.append(nb.values.sum(axis=1) / nb.valid_mask.sum(axis=0))
    want = _proj(layer.proj_out, np.concatenate(heads, axis=1))
    np.testing.assert_allclose(out, want, rtol=1e-12, atol=1e-12)


def test_direct_equals_reference_f32_example():
    layer = _layer(dtype=np.float32, std=0.2)
    x = np.random.default_rng(3).standard_normal((2, 8, 8, 8)).astype(np.float32)
    yd, _ = msa_conv_forward(x, layer)
    yr, _ = reference_forward(x, layer)
    assert yd.dtype == np.float32 and np.max(np.abs(yd - yr)) <= 1e-5


def test_one_by_one_bitwise():
    plan = HeadPlan([WindowSpec.square(1)] * 2, 4)
    layer = _layer(plan)
    x = np.random.default_rng(4).standard_normal((2, 4, 5, 3))
    g = np.random.default_rng(5).standard_normal(x.shape)
    yd, sd = msa_conv_forward(x, layer)
    yr, sr = reference_forward(x, layer)
    assert np.array_equal(yd, yr)
    gd, pd = msa_conv_backward(g, sd, layer)
    gr, pr = reference_backward(g, sr, layer)
    assert np.array_equal(gd, gr)
    assert all(np.array_equal(pd[k], pr[k]) for k in pd)


def test_one_by_one_hand_chain_rule():
    plan = HeadPlan([WindowSpec.square(1)], 3)
    layer = _layer(plan)
    x = np.random.default_rng(6).standard_normal((1, 3, 1, 1))
    g = np.random.default_rng(7).standard_normal(x.shape)
    _, s = msa_conv_forward(x, layer)
    gx, grads = msa_conv_backward(g, s, layer)
    Wo, Wv = layer.proj_out.weight, layer.proj_v.weight
    gv = Wo.T @ g[0, :, 0, 0]
    np.testing.assert_allclose(gx[0, :, 0, 0], Wv.T @ gv, rtol=1e-13)
    v = Wv @ x[0, :, 0, 0] + layer.proj_v.bias
    np.testing.assert_allclose(grads["proj_out.weight"], np.outer(g[0, :, 0, 0], v), rtol=1e-13)
    np.testing.assert_allclose(grads["proj_v.weight"], np.outer(gv, x[0, :, 0, 0]), rtol=1e-13)
    # single-slot weights are identically 1, so Q and K receive no gradient
    assert not grads["proj_q.weight"].any() and not grads["proj_k.weight"].any()


def test_zero_grad_out():
    layer = _layer(pool_factor=2)
    x = np.random.default_rng(8).standard_normal((1, 8, 6, 6))
    _, s = msa_conv_forward(x, layer)
    gx, grads = msa_conv_backward(np.zeros_like(x), s, layer)
    assert not gx.any() and not any(g.any() for g in grads.values())
    assert set(grads) == set(layer.named())


def test_single_head_gradcheck_example():
    from msaconv.gradcheck import gradcheck
    layer = _layer(HeadPlan([WindowSpec.square(3)], 4))
    x = np.random.default_rng(9).standard_normal((1, 4, 5, 5))
    state = {}

    def forward():
        y, state["s"] = msa_conv_forward(x, layer)
        return y

    def backward(cot):
        forward()
        gx, grads = msa_conv_backward(cot, state["s"], layer)
        return {"x": gx, **grads}

    rep = gradcheck(forward, backward, {"x": x, **layer.named()}, tol=1e-4)
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("name", checks.ATTENTION_SCOPES)
def test_attention_scopes(name):
    rep = checks.build_scope(name).run()
    assert rep.passed, rep.summary()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from([1, 2]))
def test_batch_permutation(seed, f):
    layer = _layer(seed=seed, pool_factor=f)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 8, 4, 6))
    perm = rng.permutation(3)
    y, _ = msa_conv_forward(x, layer)
    yp, _ = msa_conv_forward(x[perm], layer)
    np.testing.assert_allclose(yp, y[perm], rtol=1e-12, atol=1e-13)


def test_odd_map_padded_for_pooling():
    layer = _layer(pool_factor=2)
    x = np.random.default_rng(10).standard_normal((1, 8, 5, 7))
    y, s = msa_conv_forward(x, layer)
    assert y.shape == x.shape
    gx, _ = msa_conv_backward(np.ones_like(y), s, layer)
    assert gx.shape == x.shape


def test_mac_counter():
    c = MacCounter()
    layer = _layer(HeadPlan([WindowSpec.square(3)], 4))
    reference_forward(np.zeros((1, 4, 5, 5)), layer, counter=c)
    assert c.total > 0


def test_errors():
    layer = _layer()
    with pytest.raises(DimensionError):
        msa_conv_forward(np.zeros((1, 6, 4, 4)), layer)
    with pytest.raises(ValueError):
        msa_conv_forward(np.zeros((1, 8, 4, 4)), layer, impl="fft")
    x = np.zeros((1, 8, 4, 4))
    _, s = msa_conv_forward(x, layer)
    with pytest.raises(TapeError):
        msa_conv_backward(x, s, _layer(seed=1))
    msa_conv_backward(x, s, layer)
    with pytest.raises(TapeError):
        msa_conv_backward(x, s, layer)
    _, s = msa_conv_forward(x, layer)
    with pytest.raises(TapeError):
        reference_backward(x, s, layer)
    with pytest.raises(DimensionError):
        dataclasses.replace(layer, plan=HeadPlan([WindowSpec.square(3)], 4))


def test_key_projection_has_no_bias():
    assert "proj_k.bias" not in _layer().named()
