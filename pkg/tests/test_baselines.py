from fractions import Fraction

import numpy as np
import pytest

from octa_forge.baselines import (FrangiConfig, frangi_segment, frangi_vesselness, hessian,
                                  histogram_bins, otsu_bin, otsu_threshold, sym3_eigvals)
from octa_forge.errors import ConfigError, DataError
from octa_forge.metrics import dice

from conftest import tube_mask


def otsu_oracle(volume, bins=256):
    """Exhaustive search over every bin boundary, variance as w0*w1*(mu0-mu1)^2 in exact rationals."""
    v = np.asarray(volume, dtype=np.float64).ravel()
    lo, hi = v.min(), v.max()
    idx = [min(int(np.floor((x - lo) / (hi - lo) * bins)), bins - 1) for x in v.tolist()]
    counts = [0] * bins
    for i in idx:
        counts[i] += 1
    total = len(idx)
    best, best_k = None, None
    for k in range(1, bins):
        c0 = counts[:k]
        n0 = sum(c0)
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in enumerate(c0)), n0)
        mu1 = Fraction(sum(i * c for i, c in enumerate(counts) if i >= k), n1)
        var = Fraction(n0, total) * Fraction(n1, total) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, best_k = var, k
    return best_k


def test_otsu_bimodal():
    v = np.full((10, 10, 10), 0.1)
    v[5:] = 0.9
    t, mask = otsu_threshold(v)
    assert 0.1 < t < 0.9
    np.testing.assert_array_equal(mask, v == 0.9)


def test_otsu_matches_exhaustive_oracle():
    rng = np.random.default_rng(99)
    for i in range(25):
        shape = tuple(rng.integers(3, 12, size=3))
        kind = i % 3
        if kind == 0:
            v = rng.normal(size=shape)
        elif kind == 1:
            v = np.where(rng.random(shape) < 0.3, rng.normal(2, 0.5, shape), rng.normal(0, 0.3, shape))
        else:
            v = np.where(rng.random(shape) < 0.1, 1.0, 0.0)
            v.flat[0], v.flat[1] = 0.0, 1.0
        idx, _, _ = histogram_bins(v)
        assert otsu_bin(np.bincount(idx.ravel(), minlength=256)) == otsu_oracle(v)


def test_otsu_constant_volume_raises():
    with pytest.raises(DataError):
        otsu_threshold(np.ones((3, 3, 3)))


def test_otsu_affine_invariance():
    rng = np.random.default_rng(4)
    v = rng.integers(0, 256, size=(12, 12, 12)).astype(np.float64) / 256
    v.flat[0], v.flat[1] = 0.0, 255 / 256
    t1, m1 = otsu_threshold(v)
    t2, m2 = otsu_threshold(4.0 * v + 2.0)  # exact in binary floating point
    np.testing.assert_array_equal(m1, m2)
    assert t2 == 4.0 * t1 + 2.0


def test_frangi_config_validation():
    with pytest.raises(ConfigError):
        FrangiConfig(threshold=1.0 + 1e-9)
    with pytest.raises(ConfigError):
        FrangiConfig(scales_um=())
    with pytest.raises(ConfigError):
        FrangiConfig(scales_um=(4.0, 2.0))
    with pytest.raises(ConfigError):
        FrangiConfig.from_mapping({"sigma": 1})
    assert FrangiConfig.from_mapping({"scales_um": [1, 2]}).scales_um == (1.0, 2.0)


def test_eigenvalues_match_numpy(rng):
    h = rng.normal(size=(6, 500))
    got = np.stack(sym3_eigvals(*h))
    mats = np.zeros((500, 3, 3))
    for (i, j), comp in zip([(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)], h):
        mats[:, i, j] = mats[:, j, i] = comp
    want = np.linalg.eigvalsh(mats)[:, ::-1].T
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_hessian_of_quadratic():
    x, y, z = np.meshgrid(*[np.arange(-16.0, 17)] * 3, indexing="ij")
    v = -(x ** 2) - 0.5 * y ** 2  # hxx = -2, hyy = -1 away from borders
    hxx, hyy, hzz, hxy, hxz, hyz = hessian(v, 1.5)
    # kernels are moment-exact; what remains is the 16-bit input quantization
    c = (slice(12, 21),) * 3
    np.testing.assert_allclose(hxx[c] / 1.5 ** 2, -2.0, rtol=1e-4)
    np.testing.assert_allclose(hyy[c] / 1.5 ** 2, -1.0, rtol=1e-4)
    assert np.abs(hzz[c]).max() < 1e-3 and np.abs(hxy[c]).max() < 1e-3


def _cylinder(shape=(48, 48, 48), radius=6.0):
    c = (shape[0] - 1) / 2
    return tube_mask(shape, (c, c, -10), (c, c, shape[2] + 10), radius)


def test_frangi_cylinder_phantom():
    m = _cylinder()
    v = frangi_vesselness(m.astype(float), FrangiConfig(scales_um=(6.0,)), voxel_size_um=1.0)
    assert v.min() >= 0 and v.max() <= 1
    axis = v[23:25, 23:25, 8:40].mean()
    x, y = np.meshgrid(np.arange(48), np.arange(48), indexing="ij")
    far = np.hypot(x - 23.5, y - 23.5) > 16
    background = v[far][:, 8:40].mean()
    assert axis > 0.5
    assert axis > 10 * background


def test_frangi_tube_beats_plate():
    shape = (40, 40, 40)
    tube = _cylinder(shape, 4.0).astype(float)
    plate = np.zeros(shape)
    plate[:, :, 16:24] = 1.0
    cfg = FrangiConfig(scales_um=(4.0,))
    vt = frangi_vesselness(tube, cfg, 1.0)
    vp = frangi_vesselness(plate, cfg, 1.0)
    assert vt[19:21, 19:21, 10:30].mean() > 5 * vp[10:30, 10:30, 19:21].mean()


def test_frangi_constant_volume():
    assert not frangi_vesselness(np.full((10, 10, 10), 0.3)).any()


@pytest.mark.parametrize("axes", [(0, 1), (0, 2), (1, 2)])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_frangi_rotation_covariance(axes, k):
    rng = np.random.default_rng(k)
    vol = _cylinder((30, 26, 22), 3.0).astype(float)
    vol[5:12, 3:20, 4:9] = 0.6
    vol += 0.05 * rng.random(vol.shape)
    cfg = FrangiConfig(scales_um=(2.0, 3.0))
    a = np.rot90(frangi_vesselness(vol, cfg, 1.0), k, axes)
    b = frangi_vesselness(np.ascontiguousarray(np.rot90(vol, k, axes)), cfg, 1.0)
    assert a.tobytes() == np.ascontiguousarray(b).tobytes()


def test_frangi_segment():
    m = _cylinder((40, 40, 40), 6.0)
    cfg = FrangiConfig(threshold=0.5)
    seg = frangi_segment(m.astype(float), cfg, 1.0)
    assert dice(seg, m) > 0.5
    zero = FrangiConfig(scales_um=(6.0,), threshold=0.0)
    v = frangi_vesselness(m.astype(float), zero, 1.0)
    np.testing.assert_array_equal(frangi_segment(m.astype(float), zero, 1.0), v > 0)


def test_dark_vessels():
    m = _cylinder((32, 32, 32), 4.0)
    cfg = FrangiConfig(scales_um=(4.0,), bright_on_dark=False)
    v = frangi_vesselness(1.0 - m, cfg, 1.0)
    assert v[15:17, 15:17, 8:24].mean() > 0.5
