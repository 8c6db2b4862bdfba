"""Decoder MLP and view-direction encoding tests."""

import numpy as np
import pytest

from hashfield import decoder as dec


def make_params(seed=0, depth=2, width=16, in_dim=8, view_levels=2,
                dtype=np.float64):
    cfg = dec.DecoderConfig(depth=depth, width=width,
                            view_enc_levels=view_levels)
    rng = np.random.default_rng(seed)
    return dec.DecoderParams.initialize(cfg, in_dim, rng, dtype=dtype), rng


class TestSinusoidalEncode:
    def test_zero_input(self):
        enc = dec.sinusoidal_encode(np.zeros(3), levels=3)
        enc = enc.reshape(3, 3, 2)
        np.testing.assert_allclose(enc[..., 0], 1.0)
        np.testing.assert_allclose(enc[..., 1], 0.0)

    def test_unit_input_level_zero(self):
        enc = dec.sinusoidal_encode(np.array([1.0, 0.0, 0.0]), levels=1)
        enc = enc.reshape(1, 3, 2)
        assert enc[0, 0, 0] == pytest.approx(-1.0, abs=1e-12)  # cos(pi)
        assert enc[0, 0, 1] == pytest.approx(0.0, abs=1e-12)   # sin(pi)

    def test_output_dim(self):
        out = dec.sinusoidal_encode(np.zeros((7, 3)), levels=4)
        assert out.shape == (7, 3 * 2 * 4)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(1)
        levels = 3
        dirs = rng.standard_normal((5, 3))
        g = rng.standard_normal((5, 3 * 2 * levels))

        def loss(d):
            return float((g * dec.sinusoidal_encode(d, levels)).sum())

        grad = dec.sinusoidal_encode_backward(g, dirs, levels)
        h = 1e-6
        for i in range(5):
            for k in range(3):
                d = dirs.copy()
                d[i, k] += h
                hi = loss(d)
                d[i, k] -= 2 * h
                lo = loss(d)
                fd = (hi - lo) / (2 * h)
                assert abs(grad[i, k] - fd) < 1e-8 * max(abs(fd), 1.0)


class TestDecoderForward:
    def test_zero_params(self):
        params, rng = make_params()
        for t in params.tensors.values():
            t[:] = 0.0
        y = rng.standard_normal((4, 8))
        de = rng.standard_normal((4, params.config.dir_enc_dim))
        sigma, rgb, _ = dec.decoder_forward(y, de, params)
        np.testing.assert_allclose(sigma, np.log(2.0), atol=1e-12)
        np.testing.assert_allclose(rgb, 0.5, atol=1e-12)

    def test_deterministic(self):
        params, rng = make_params(seed=2)
        y = rng.standard_normal((6, 8))
        de = rng.standard_normal((6, params.config.dir_enc_dim))
        s1, c1, _ = dec.decoder_forward(y, de, params)
        s2, c2, _ = dec.decoder_forward(y, de, params)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(c1, c2)

    def test_output_ranges(self):
        params, rng = make_params(seed=3)
        y = rng.standard_normal((10_000, 8))
        de = rng.standard_normal((10_000, params.config.dir_enc_dim))
        sigma, rgb, _ = dec.decoder_forward(y, de, params)
        assert (sigma >= 0).all()
        assert ((rgb > 0) & (rgb < 1)).all()

    def test_output_bounds_extreme_inputs(self):
        # float64 sigmoid saturates for |pre| > ~36; bounds still hold
        params, rng = make_params(seed=3)
        y = rng.standard_normal((1000, 8)) * 100
        de = rng.standard_normal((1000, params.config.dir_enc_dim))
        sigma, rgb, _ = dec.decoder_forward(y, de, params)
        assert np.isfinite(sigma).all() and (sigma >= 0).all()
        assert ((rgb >= 0) & (rgb <= 1)).all()

    def test_shape_validation(self):
        params, rng = make_params()
        with pytest.raises(ValueError):
            dec.decoder_forward(np.zeros((3, 9)), np.zeros((3, 12)), params)
        with pytest.raises(ValueError):
            dec.decoder_forward(np.zeros((3, 8)), np.zeros((3, 5)), params)


class TestDecoderBackward:
    def probe_inputs(self, params, rng, n=6):
        """Inputs whose pre-activations stay away from the ReLU kinks."""
        t = params.tensors
        cfg = params.config
        while True:
            y = rng.standard_normal((n, params.in_dim))
            de = rng.standard_normal((n, cfg.dir_enc_dim))
            margins = []
            h = y
            for i in range(cfg.depth):
                pre = h @ t[f"trunk.{i}.w"] + t[f"trunk.{i}.b"]
                margins.append(np.abs(pre).min())
                h = np.maximum(pre, 0.0)
            feature = h @ t["feature.w"] + t["feature.b"]
            pre = (np.concatenate([feature, de], axis=1)
                   @ t["color_hidden.w"] + t["color_hidden.b"])
            margins.append(np.abs(pre).min())
            if min(margins) >= 1e-3:
                return y, de

    def test_zero_upstream(self):
        params, rng = make_params(seed=4)
        y = rng.standard_normal((3, 8))
        de = rng.standard_normal((3, params.config.dir_enc_dim))
        _, _, tape = dec.decoder_forward(y, de, params)
        dy, ddir = dec.decoder_backward(np.zeros(3), np.zeros((3, 3)), tape,
                                        params)
        np.testing.assert_array_equal(dy, 0.0)
        np.testing.assert_array_equal(ddir, 0.0)
        for gr in params.grads.values():
            np.testing.assert_array_equal(gr, 0.0)

    def test_linearity(self):
        params, rng = make_params(seed=5)
        y = rng.standard_normal((4, 8))
        de = rng.standard_normal((4, params.config.dir_enc_dim))
        _, _, tape = dec.decoder_forward(y, de, params)
        gs = rng.standard_normal(4)
        gc = rng.standard_normal((4, 3))
        dy1, dd1 = dec.decoder_backward(gs, gc, tape, params)
        g1 = {k: v.copy() for k, v in params.grads.items()}
        params.zero_grads()
        dy3, dd3 = dec.decoder_backward(3.0 * gs, 3.0 * gc, tape, params)
        np.testing.assert_allclose(dy3, 3.0 * dy1, rtol=1e-12)
        np.testing.assert_allclose(dd3, 3.0 * dd1, rtol=1e-12)
        for k in g1:
            np.testing.assert_allclose(params.grads[k], 3.0 * g1[k],
                                       rtol=1e-12)

    def test_gradients_match_fd(self):
        params, rng = make_params(seed=6)
        y, de = self.probe_inputs(params, rng)
        gs = rng.standard_normal(y.shape[0])
        gc = rng.standard_normal((y.shape[0], 3))

        def loss(p=params, yy=None, dd=None):
            sigma, rgb, _ = dec.decoder_forward(
                yy if yy is not None else y,
                dd if dd is not None else de, p)
            return float((gs * sigma).sum() + (gc * rgb).sum())

        _, _, tape = dec.decoder_forward(y, de, params)
        params.zero_grads()
        dy, ddir = dec.decoder_backward(gs, gc, tape, params)

        h = 1e-6
        rng_probe = np.random.default_rng(7)
        # every parameter tensor, sampled coordinates
        for name, tensor in params.tensors.items():
            flat = tensor.reshape(-1)
            idx = rng_probe.choice(flat.size, size=min(20, flat.size),
                                   replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                hi = loss()
                flat[i] = orig - h
                lo = loss()
                flat[i] = orig
                fd = (hi - lo) / (2 * h)
                got = params.grads[name].reshape(-1)[i]
                assert abs(got - fd) < 1e-5 * max(abs(fd), 1e-4), name
        # both inputs
        for i in range(y.shape[0]):
            for k in range(y.shape[1]):
                yy = y.copy()
                yy[i, k] += h
                hi = loss(yy=yy)
                yy[i, k] -= 2 * h
                lo = loss(yy=yy)
                fd = (hi - lo) / (2 * h)
                assert abs(dy[i, k] - fd) < 1e-5 * max(abs(fd), 1e-4)
        for i in range(de.shape[0]):
            for k in range(de.shape[1]):
                dd = de.copy()
                dd[i, k] += h
                hi = loss(dd=dd)
                dd[i, k] -= 2 * h
                lo = loss(dd=dd)
                fd = (hi - lo) / (2 * h)
                assert abs(ddir[i, k] - fd) < 1e-5 * max(abs(fd), 1e-4)

    def test_upstream_shape_validation(self):
        params, rng = make_params()
        y = rng.standard_normal((3, 8))
        de = rng.standard_normal((3, params.config.dir_enc_dim))
        _, _, tape = dec.decoder_forward(y, de, params)
        with pytest.raises(ValueError):
            dec.decoder_backward(np.zeros(4), np.zeros((3, 3)), tape, params)
