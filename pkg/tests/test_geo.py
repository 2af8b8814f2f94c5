import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import naive_matvec
from yearclip.errors import ShapeMismatch
from yearclip.geo import (
    ZeroConvParams,
    adapter_forward,
    fuse,
    init_adapter,
    init_location_mlp,
    location_forward,
    make_rff,
    rff_encode,
    zero_conv,
)
from yearclip.layers import Dense, Mlp, activate, init_mlp


class TestRff:
    def test_origin(self):
        rff = make_rff(5, 4.0, 0)
        out = rff_encode(0.0, 0.0, rff)
        expected = math.sqrt(1 / 5) * np.array([0.0] * 5 + [1.0] * 5)
        assert np.array_equal(out, expected)

    def test_deterministic(self):
        a = rff_encode(48.8, 2.35, make_rff(16, 4.0, 3))
        b = rff_encode(48.8, 2.35, make_rff(16, 4.0, 3))
        assert a.tobytes() == b.tobytes()

    def test_paris_frozen(self):
        rff = make_rff(4, 4.0, 7)
        # frequencies and values frozen from a scalar math.sin/cos evaluation
        assert rff.freqs.tolist() == [[0.004920613429930297, 1.1949821500338795],
                                      [-1.0965514214488703, -3.562367355029097],
                                      [-1.8186831406868902, -3.9665862199858495],
                                      [0.24057441038975394, 5.360860982218134]]
        expected = [0.009134102771895424, -0.29903197387999897, -0.43067379794042987, 0.09954723728222421,
                    0.4999165612045199, 0.40072419267799597, 0.25400803091155555, 0.4899901504616971]
        assert np.allclose(rff_encode(48.8, 2.35, rff), expected, rtol=0, atol=1e-14)

    @given(st.floats(-90, 90), st.floats(-180, 180), st.integers(1, 32))
    def test_unit_norm_and_bounds(self, lat, lon, f):
        out = rff_encode(lat, lon, make_rff(f, 4.0, 1))
        assert 1 - 1e-9 <= float(out @ out) <= 1 + 1e-9
        assert np.all(np.abs(out) <= math.sqrt(1 / f) + 1e-15)

    def test_batched_matches_single(self):
        rff = make_rff(8, 2.0, 5)
        lats, lons = np.array([10.0, -45.0]), np.array([100.0, -3.0])
        batch = rff_encode(lats, lons, rff)
        for i in range(2):
            assert np.allclose(batch[i], rff_encode(lats[i], lons[i], rff), atol=1e-15)


class TestAdapter:
    def test_identity_layer(self, rng):
        mlp = Mlp([Dense(np.eye(6), np.zeros(6))])
        v = rng.normal(size=6)
        assert np.array_equal(adapter_forward(v, mlp), v)

    def test_zero_in_zero_out(self):
        mlp = init_mlp(np.random.default_rng(0), [8, 8, 8], "gelu")
        assert np.array_equal(adapter_forward(np.zeros(8), mlp), np.zeros(8))

    def test_two_layer_matches_naive(self, rng):
        mlp = init_mlp(rng, [8, 8, 8], "gelu")
        for layer in mlp.layers:
            layer.bias[...] = rng.normal(size=layer.bias.shape)
        x = rng.normal(size=8)
        h = naive_matvec(mlp.layers[0].weight, mlp.layers[0].bias, x)
        h = np.array([v * 0.5 * (1 + math.erf(v / math.sqrt(2))) for v in h])
        y = naive_matvec(mlp.layers[1].weight, mlp.layers[1].bias, h)
        assert np.allclose(adapter_forward(x, mlp), y, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adapter_forward(np.zeros(5), init_adapter(np.random.default_rng(0), 4, 8))


class TestLocation:
    def test_origin_cos_block_only(self, rng):
        f, d = 4, 6
        rff = make_rff(f, 4.0, 2)
        mlp = init_mlp(rng, [2 * f, d, d], "tanh")
        out = location_forward((0.0, 0.0), rff, mlp)
        # sin block is zero, so only the cos-block columns of layer 0 contribute
        enc = [0.0] * f + [math.sqrt(1 / f)] * f
        h = np.tanh(naive_matvec(mlp.layers[0].weight, mlp.layers[0].bias, enc))
        y = naive_matvec(mlp.layers[1].weight, mlp.layers[1].bias, h)
        assert np.allclose(out, y, rtol=0, atol=1e-14)
        cos_only = np.tanh(mlp.layers[0].weight[:, f:] @ np.full(f, math.sqrt(1 / f)))
        assert np.allclose(h, cos_only, atol=1e-15)

    def test_deterministic(self):
        def build():
            return make_rff(8, 4.0, 11), init_location_mlp(np.random.default_rng(4), 8, 16)

        a = location_forward((12.0, 34.0), *build())
        b = location_forward((12.0, 34.0), *build())
        assert a.tobytes() == b.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            location_forward((0.0, 0.0), make_rff(4, 1.0, 0), init_location_mlp(np.random.default_rng(0), 5, 8))


class TestZeroConvAndFuse:
    def test_zero_init(self, rng):
        out = zero_conv(rng.normal(size=7), ZeroConvParams.zeros(7))
        assert np.array_equal(out, np.zeros(7))

    def test_identity(self, rng):
        v = rng.normal(size=5)
        assert np.array_equal(zero_conv(v, ZeroConvParams(np.eye(5), np.zeros(5))), v)

    def test_random_matches_naive(self, rng):
        zc = ZeroConvParams(rng.normal(size=(6, 6)), rng.normal(size=6))
        v = rng.normal(size=6)
        assert np.allclose(zero_conv(v, zc), naive_matvec(zc.weight, zc.bias, v), rtol=0, atol=1e-13)

    def test_fuse(self):
        assert np.array_equal(fuse([1.0, 2.0], [3.0, 4.0]), [4.0, 6.0])
        assert np.array_equal(fuse([1.0, 2.0]), [1.0, 2.0])
        assert np.array_equal(fuse([1.0, 2.0], [0.0, 0.0]), [1.0, 2.0])
        with pytest.raises(ShapeMismatch):
            fuse([1.0, 2.0], [1.0])

    def test_gps_neutral_at_init(self, rng):
        adapter = init_adapter(rng, 8, 8)
        rff = make_rff(4, 4.0, 0)
        loc = init_location_mlp(rng, 4, 8)
        z = rng.normal(size=8)
        z_v = adapter_forward(z, adapter)
        fused = fuse(z_v, zero_conv(location_forward((48.0, 11.0), rff, loc), ZeroConvParams.zeros(8)))
        assert fused.tobytes() == z_v.tobytes()


@pytest.mark.parametrize("name", ["tanh", "gelu", "identity"])
def test_activation_grad_finite_difference(name):
    from yearclip.layers import activate_grad

    x = np.linspace(-3, 3, 13)
    h = 1e-6
    numeric = (activate(name, x + h) - activate(name, x - h)) / (2 * h)
    assert np.allclose(activate_grad(name, x), numeric, atol=1e-8)
