import numpy as np

from msaconv import erf
from msaconv.windows import WindowSpec


def _layers(specs, size=48):
    probe = erf.LayerStackProbe.build(specs)
    m = erf.erf_compute(probe, erf.random_inputs(4, size))
    n = size // probe.patch
    return m, erf.analytic_footprint([[s] for s in specs], (n // 2, n // 2), (n, n))


def test_single_layer_pixels():
    m, want = _layers([WindowSpec.square(3)])
    assert np.array_equal(m.token_support(4), want)
    assert m.support().sum() == 12 * 12
    assert m.grid.max() == 1.0 and m.grid.min() >= 0.0


def test_dilated_layer_confined():
    m, want = _layers([WindowSpec.square(3, 4)])
    assert np.array_equal(m.token_support(4), want)
    ys, xs = np.nonzero(want)
    assert np.ptp(ys) + 1 == 9 and np.ptp(xs) + 1 == 9


def test_stacked_layers():
    m, want = _layers([WindowSpec.square(3), WindowSpec.square(3)])
    assert np.array_equal(m.token_support(4), want) and want.sum() == 25


def test_off_center_target():
    probe = erf.LayerStackProbe.build([WindowSpec.square(3)])
    m = erf.erf_compute(probe, erf.random_inputs(2, 32), target=(0, 0))
    assert m.token_support(4).sum() == 4


def test_degenerate_flag():
    probe = erf.LayerStackProbe.build([WindowSpec.square(3)])
    probe.embed.weight[:] = 0
    probe.layers[0].proj_v.weight[:] = 0
    m = erf.erf_compute(probe, erf.random_inputs(2, 16))
    assert m.degenerate and not m.support().any()


def test_ablation_inclusion_and_grid():
    full = erf.config_erf(erf.PROBE_CONFIG, n_inputs=2).support()
    for without in [("dilated",), ("depthwise",), ("interpool",), erf.ABLATIONS]:
        part = erf.config_erf(erf.PROBE_CONFIG, without, n_inputs=2).support()
        assert not (part & ~full).any(), without
        assert (full & ~part).any(), without
    assert erf.variant_name(()) == "full"
    assert erf.variant_name(("shift", "dilated")) == "no-dilated-shift"
    assert len(erf.ablation_grid(grid=True)) == 2 + len(erf.ABLATIONS)
    assert erf.ablation_grid(("shift",)) == [(), ("shift",)]


def test_pgm(tmp_path):
    m = erf.ErfMap(np.array([[0.0, 0.5], [1.0, 0.25]]))
    pgm = m.to_pgm()
    assert pgm.startswith(b"P5\n2 2\n255\n") and pgm[-4:] == bytes([0, 128, 255, 64])
    m.save(tmp_path / "e")
    assert (tmp_path / "e.t4f").exists() and (tmp_path / "e.pgm").read_bytes() == pgm
