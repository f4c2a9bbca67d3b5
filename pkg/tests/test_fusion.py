import numpy as np
import pytest

from msct import ConfigurationError
from msct.fusion import build_side_information, fuse_sinograms
from msct.geometry import Sinogram, parallel_geometry
from msct.metrics import ssim
from msct.optimizers import Regularizer, SmoothDataFit, fbs_solve
from msct.regularizers import tv_value
from msct.simulation import (
    EnergyChannel,
    PhantomSpec,
    Region,
    channel_seed,
    counts_to_sinogram,
    rasterize_phantom,
    simulate_counts,
)
from msct.tomo import XRayTransform

GEOM = parallel_geometry(6, 5, 1.0)


def _random(seed, geom=GEOM):
    return Sinogram(np.random.default_rng(seed).standard_normal(geom.shape), geom, f"s{seed}")


def test_single_input_is_identity():
    s = _random(0)
    np.testing.assert_array_equal(fuse_sinograms([s]).values, s.values)
    assert fuse_sinograms([s]).geometry == GEOM


def test_additive_inverse_gives_zero():
    s = _random(1)
    neg = Sinogram(-s.values, GEOM, "neg")
    assert not fuse_sinograms([s, neg]).values.any()


def test_sum_matches_loop():
    sinos = [_random(k) for k in range(3)]
    expected = np.zeros(GEOM.shape)
    for i in range(GEOM.shape[0]):
        for j in range(GEOM.shape[1]):
            for s in sinos:
                expected[i, j] += s.values[i, j]
    np.testing.assert_array_equal(fuse_sinograms(sinos).values, expected)
    np.testing.assert_allclose(fuse_sinograms(sinos[::-1]).values, expected, rtol=1e-15, atol=1e-15)


def test_geometry_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        fuse_sinograms([_random(0), _random(1, parallel_geometry(6, 7, 1.0))])
    with pytest.raises(ConfigurationError):
        fuse_sinograms([])


def _channels(n=32):
    mats = {"a": {"E0": 1.0, "E1": 0.8, "E2": 1.2}, "b": {"E0": 3.0, "E1": 2.0, "E2": 2.5}}
    regions = [Region("disk", "a", {"center": [0.0, 0.0], "radius": 0.4}),
               Region("rectangle", "b", {"center": [0.1, -0.1], "size": [0.2, 0.3]}),
               Region("disk", "void", {"center": [-0.15, 0.15], "radius": 0.08})]
    spec = PhantomSpec((n, n), 1.0, regions, mats)
    geom = parallel_geometry(30, 48, spec.pixel_size)
    truths, sinos = [], []
    for k, label in enumerate(("E0", "E1", "E2")):
        ch = EnergyChannel(label, 0.0, 1e3)
        u = rasterize_phantom(spec, ch)
        truths.append(u.values)
        sinos.append(counts_to_sinogram(simulate_counts(u, geom, ch, channel_seed(0, k)), ch, geom))
    return spec.pixel_size, truths, sinos


@pytest.mark.parametrize("alpha", [1e-4, 1e-3])
def test_fused_side_information_beats_single_channels(alpha):
    # Channels with comparable noise: summing raises the signal-to-noise ratio.
    h, truths, sinos = _channels()
    shape = truths[0].shape
    v, _ = build_side_information(fuse_sinograms(sinos), alpha, shape, h, 1e-6, 300)
    op = XRayTransform(sinos[0].geometry, shape, h)
    fused_score = ssim(v.values, sum(truths))
    for sino, truth in zip(sinos, truths):
        u, _ = fbs_solve(SmoothDataFit(op, sino.values), Regularizer(alpha, None, h), tol=1e-6, max_iters=300,
                         u0=np.zeros(shape))
        assert fused_score > ssim(u, truth)


def test_side_information_is_nonnegative():
    h, truths, sinos = _channels(16)
    v, trace = build_side_information(fuse_sinograms(sinos), 1e-3, truths[0].shape, h, 1e-6, 50)
    assert np.all(v.values >= 0) and v.pixel_size == h and len(trace) >= 1


def test_huge_alpha_flattens():
    h, truths, sinos = _channels(16)
    fused = fuse_sinograms(sinos)
    small, _ = build_side_information(fused, 1e-4, truths[0].shape, h, 1e-6, 300)
    huge, _ = build_side_information(fused, 1e2, truths[0].shape, h, 1e-6, 300)
    assert tv_value(huge.values, h) < 1e-3 * tv_value(small.values, h)


def test_zero_data_gives_zero():
    geom = parallel_geometry(8, 10, 1.0)
    v, _ = build_side_information(Sinogram(np.zeros(geom.shape), geom), 1e-3, (6, 6), 1.0, 1e-6, 20)
    assert not v.values.any()


def test_alpha_must_be_positive():
    with pytest.raises(ConfigurationError):
        build_side_information(_random(0), 0.0, (4, 4))
