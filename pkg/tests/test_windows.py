import numpy as np
import pytest
from hypothesis import given, strategies as st

from msaconv.tensor import DimensionError
from msaconv.windows import HeadPlan, WindowSpec, extract_windows, fold_windows

odd = st.integers(0, 3).map(lambda i: 2 * i + 1)
specs = st.builds(WindowSpec, odd, odd, st.integers(1, 4), st.integers(1, 4))


def test_one_by_one_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    nb = extract_windows(x, WindowSpec.square(1))
    assert nb.values.shape == (2, 1, 3, 4, 5)
    assert np.array_equal(nb.values[:, 0], x) and nb.valid_mask.all()


def test_corner_slots():
    nb = extract_windows(np.zeros((1, 1, 6, 6)), WindowSpec.square(3))
    corner = nb.valid_mask[:, 0, 0].reshape(3, 3)
    assert corner.sum() == 4
    assert corner[1:, 1:].all()


def test_dilated_center():
    x = np.arange(81.0).reshape(1, 1, 9, 9)
    nb = extract_windows(x, WindowSpec.square(3, 4))
    assert nb.valid_mask[:, 4, 4].all()
    got = nb.values[0, :, 0, 4, 4]
    want = [x[0, 0, 4 + dy, 4 + dx] for dy in (-4, 0, 4) for dx in (-4, 0, 4)]
    assert list(got) == want


def test_invalid_slots_zero():
    x = np.ones((1, 2, 3, 3))
    nb = extract_windows(x, WindowSpec.square(5))
    v = nb.values.transpose(0, 2, 1, 3, 4)  # (B, C, S, H, W)
    assert np.all(v[:, :, ~nb.valid_mask] == 0)
    assert np.all(v[:, :, nb.valid_mask] == 1)


@given(specs, st.integers(1, 7), st.integers(1, 7), st.integers(0, 2 ** 16))
def test_fold_is_adjoint(spec, H, W, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, H, W))
    y = rng.standard_normal((1, spec.slots, 2, H, W))
    nb = extract_windows(x, spec)
    lhs = np.sum(nb.values * y)
    rhs = np.sum(x * fold_windows(y, spec, x.shape))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@given(specs)
def test_parse_roundtrip(spec):
    assert WindowSpec.parse(str(spec)) == spec


def test_parse_forms():
    assert WindowSpec.parse("3x3d4") == WindowSpec(3, 3, 4, 4)
    assert WindowSpec.parse("1x7") == WindowSpec(1, 7)
    assert WindowSpec.parse("5") == WindowSpec(5, 5)
    assert WindowSpec.parse("3x3d2,1") == WindowSpec(3, 3, 2, 1)
    for bad in ("", "3x", "axb", "4x4"):
        with pytest.raises(ValueError):
            WindowSpec.parse(bad)


def test_spans_and_offsets():
    w = WindowSpec(3, 5, 4, 2)
    assert (w.span_h, w.span_w) == (9, 9) and w.slots == 15
    offs = list(w.offsets())
    assert offs[0] == (-4, -4) and offs[-1] == (4, 4) and len(set(offs)) == 15


def test_head_plan():
    plan = HeadPlan([WindowSpec.square(7), WindowSpec.square(3, 4), WindowSpec.square(3)], 12)
    assert plan.num_heads == 3 and plan.head_dim == 4
    assert plan.head_slice(2) == slice(8, 12)
    assert plan.largest() == WindowSpec.square(3, 4)
    with pytest.raises(DimensionError):
        HeadPlan([WindowSpec.square(3)] * 3, 8)
    with pytest.raises(ValueError):
        HeadPlan([], 8)
