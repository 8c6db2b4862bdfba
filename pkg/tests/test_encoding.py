"""Tests of the multi-resolution hash encoding against independent oracles."""

import math

import numpy as np
import pytest

from hashfield import encoding as enc
from hashfield.encoding import (
    EncodingConfig,
    HashTables,
    RAW,
    SMOOTH,
    STRAIGHT_THROUGH,
)


def hash_oracle(corner, primes, table_size):
    """Big-integer brute force of the spatial hash: per-axis wrap-around
    products XORed, then reduced modulo the table size."""
    acc = 0
    for c, p in zip(corner, primes):
        acc ^= (int(c) * int(p)) % (1 << 64)
    return acc % table_size


def encode_oracle(x, tables, config):
    """Scalar re-implementation of the d-linear encoding forward pass."""
    specs = enc.resolution_schedule(config)
    out = []
    for spec in specs:
        feats = [0.0] * config.n_features
        scaled = [float(x[j]) * spec.resolution for j in range(config.n_dims)]
        base = [min(int(math.floor(s)), spec.resolution - 1) for s in scaled]
        frac = [s - b for s, b in zip(scaled, base)]
        for i in range(2 ** config.n_dims):
            bits = [(i >> j) & 1 for j in range(config.n_dims)]
            corner = [b + o for b, o in zip(base, bits)]
            w = 1.0
            for j in range(config.n_dims):
                w *= frac[j] if bits[j] else 1.0 - frac[j]
            if spec.dense:
                idx = 0
                for c in corner:
                    idx = idx * (spec.resolution + 1) + c
            else:
                idx = hash_oracle(corner, config.hash_primes, config.table_size)
            row = tables.values[spec.level - 1, idx]
            for f in range(config.n_features):
                feats[f] += w * float(row[f])
        out.extend(feats)
    return np.array(out)


class TestResolutionSchedule:
    def test_paper_configuration(self):
        cfg = EncodingConfig(n_levels=16, table_size=2 ** 19, n_features=2,
                             base_resolution=16, finest_resolution=512)
        assert enc.growth_factor(cfg) == pytest.approx(2.0 ** (1.0 / 3.0),
                                                       abs=1e-12)
        res = [s.resolution for s in enc.resolution_schedule(cfg)]
        assert res[0] == 16
        assert res[1] == 20
        assert res[15] == 512

    def test_equal_bounds_degenerate(self):
        cfg = EncodingConfig(n_levels=4, base_resolution=16,
                             finest_resolution=16)
        assert [s.resolution for s in enc.resolution_schedule(cfg)] == [16] * 4

    def test_exact_doubling(self):
        cfg = EncodingConfig(n_levels=3, base_resolution=2,
                             finest_resolution=8)
        assert enc.growth_factor(cfg) == pytest.approx(2.0, abs=1e-12)
        assert [s.resolution for s in enc.resolution_schedule(cfg)] == [2, 4, 8]

    def test_single_level(self):
        cfg = EncodingConfig(n_levels=1, base_resolution=16,
                             finest_resolution=512)
        assert enc.growth_factor(cfg) == 1.0
        assert enc.resolution_schedule(cfg)[0].resolution == 16

    def test_rejects_bad_configs(self):
        with pytest.raises(ValueError):
            EncodingConfig(n_levels=0)
        with pytest.raises(ValueError):
            EncodingConfig(base_resolution=64, finest_resolution=16)
        with pytest.raises(ValueError):
            EncodingConfig(table_size=1000)  # not a power of two

    def test_monotone_resolutions(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            base = int(rng.integers(1, 32))
            finest = int(rng.integers(base, 512))
            levels = int(rng.integers(1, 20))
            cfg = EncodingConfig(n_levels=levels, base_resolution=base,
                                 finest_resolution=finest)
            res = [s.resolution for s in enc.resolution_schedule(cfg)]
            assert res == sorted(res)
            assert res[0] == base
            if levels > 1:
                assert res[-1] == finest


class TestSpatialHash:
    def hashed_level(self, cfg):
        # resolution large enough that (res+1)^d exceeds the table
        return enc.LevelSpec(level=1, resolution=10 ** 4, dense=False)

    def test_zero_corner(self):
        cfg = EncodingConfig()
        assert enc.spatial_hash((0, 0, 0), self.hashed_level(cfg), cfg) == 0

    def test_identity_prime_axis(self):
        cfg = EncodingConfig(table_size=2 ** 19)
        assert enc.spatial_hash((5, 0, 0), self.hashed_level(cfg), cfg) == 5

    def test_matches_bigint_oracle(self):
        cfg = EncodingConfig(table_size=2 ** 10)
        level = self.hashed_level(cfg)
        rng = np.random.default_rng(3)
        corners = rng.integers(0, 2 ** 31, size=(1000, 3))
        got = enc._table_indices(corners.astype(np.int64), level, cfg)
        want = [hash_oracle(c, cfg.hash_primes, cfg.table_size)
                for c in corners]
        np.testing.assert_array_equal(got, np.array(want))

    def test_dense_level_injective(self):
        cfg = EncodingConfig(n_dims=3, table_size=2 ** 14)
        level = enc.LevelSpec(level=1, resolution=8, dense=True)
        side = level.resolution + 1
        grid = np.stack(np.meshgrid(*[np.arange(side)] * 3,
                                    indexing="ij"), axis=-1).reshape(-1, 3)
        idx = enc._table_indices(grid.astype(np.int64), level, cfg)
        assert len(np.unique(idx)) == side ** 3
        assert idx.min() >= 0 and idx.max() < cfg.table_size

    def test_rejects_negative_corner(self):
        cfg = EncodingConfig()
        with pytest.raises(ValueError):
            enc.spatial_hash((-1, 0, 0), self.hashed_level(cfg), cfg)


class TestInterpWeights:
    def corners(self, base, d):
        bits = enc._corner_bits(d)
        return np.asarray(base)[None, :] + bits

    def test_corner_hit(self):
        c = self.corners([2, 3, 4], 3)
        w, _ = enc.interp_weights(np.array([2.0, 3.0, 4.0]), c)
        np.testing.assert_allclose(w[0], 1.0)
        np.testing.assert_allclose(w[1:], 0.0)

    def test_cell_center(self):
        c = self.corners([0, 0, 0], 3)
        w, _ = enc.interp_weights(np.array([0.5, 0.5, 0.5]), c)
        np.testing.assert_allclose(w, 1.0 / 8.0)

    def test_1d_hand_case(self):
        c = np.array([[0], [1]])
        w, dw = enc.interp_weights(np.array([0.3]), c)
        np.testing.assert_allclose(w, [0.7, 0.3])
        np.testing.assert_allclose(dw[:, 0], [-1.0, 1.0])

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_partition_of_unity(self, d):
        rng = np.random.default_rng(11)
        bits = enc._corner_bits(d)
        for _ in range(200):
            base = rng.integers(0, 50, size=d)
            x = base + rng.uniform(0, 1, size=d)
            w, _ = enc.interp_weights(x, base[None, :] + bits)
            assert abs(w.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_conjugate_corner_identity_exact(self, d):
        rng = np.random.default_rng(12)
        bits = enc._corner_bits(d)
        for _ in range(50):
            x = rng.uniform(0, 1, size=d)
            _, dw = enc.interp_weights(x, bits)
            for i in range(2 ** d):
                for k in range(d):
                    partner = i ^ (1 << k)
                    # bitwise-equal magnitudes, opposite signs
                    assert dw[partner, k] == -dw[i, k]


class TestSmoothWeights:
    def test_forward_identity(self):
        w = np.array([0.3, 0.7])
        w_hat, _ = enc.smooth_weights(w, 1.0)
        np.testing.assert_array_equal(w_hat, w)

    def test_backward_scale_midpoint(self):
        _, scale = enc.smooth_weights(np.array([0.5, 0.5]), 1.0)
        np.testing.assert_allclose(scale, 1.0 + np.pi / 2.0, atol=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
    def test_corner_scale_is_one(self, lam):
        _, scale = enc.smooth_weights(np.array([0.0, 1.0]), lam)
        np.testing.assert_allclose(scale, 1.0, atol=1e-15)

    def test_cosine_activation_value(self):
        assert enc.cosine_activation(0.25) == pytest.approx(
            (1.0 - math.cos(math.pi / 4.0)) / 2.0, abs=1e-12)
        assert enc.cosine_activation(0.25) == pytest.approx(0.146447, abs=1e-6)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            enc.smooth_weights(np.array([1.2, -0.2]), 1.0)


class TestEncode:
    def small_config(self, **kw):
        defaults = dict(n_levels=4, table_size=2 ** 8, n_features=2,
                        base_resolution=2, finest_resolution=16, n_dims=3)
        defaults.update(kw)
        return EncodingConfig(**defaults)

    def tables_for(self, cfg, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        t = HashTables.initialize(cfg, rng, dtype=dtype)
        t.values = rng.standard_normal(t.values.shape).astype(dtype)
        return t

    def test_zero_tables_zero_output(self):
        cfg = self.small_config()
        tables = HashTables.initialize(cfg, np.random.default_rng(0),
                                       dtype=np.float64)
        tables.values[:] = 0.0
        out = enc.encode(np.array([0.3, 0.6, 0.9]), tables, cfg)
        np.testing.assert_array_equal(out.y, 0.0)

    def test_single_nonzero_entry(self):
        cfg = self.small_config()
        tables = HashTables.initialize(cfg, np.random.default_rng(0),
                                       dtype=np.float64)
        tables.values[:] = 0.0
        x = np.array([0.31, 0.62, 0.13])
        out = enc.encode(x, tables, cfg)
        ctx = out.context
        li, ci = 2, 5
        idx = ctx.indices[0, li, ci]
        tables.values[li, idx, 0] = 3.5
        out2 = enc.encode(x, tables, cfg)
        level_block = out2.y.reshape(cfg.n_levels, cfg.n_features)
        # only the touched level reacts, with the corner's forward weight
        expected = ctx.weights_used[0, li, ci] * 3.5
        # collisions could route other corners of the same cell to idx
        colliding = ctx.indices[0, li] == idx
        expected = ctx.weights_used[0, li][colliding].sum() * 3.5
        np.testing.assert_allclose(level_block[li, 0], expected, rtol=1e-12)
        assert level_block[li, 1] == 0.0
        untouched = np.delete(level_block, li, axis=0)
        np.testing.assert_array_equal(untouched, 0.0)

    def test_matches_scalar_oracle(self):
        cfg = self.small_config()
        tables = self.tables_for(cfg, seed=5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            x = rng.uniform(0, 1, size=3)
            got = enc.encode(x, tables, cfg, mode=RAW).y
            want = encode_oracle(x, tables, cfg)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_out_of_cube_clamped_and_flagged(self):
        cfg = self.small_config()
        tables = self.tables_for(cfg)
        out = enc.encode(np.array([-0.2, 0.5, 1.3]), tables, cfg)
        boundary = enc.encode(np.array([0.0, 0.5, 1.0]), tables, cfg)
        np.testing.assert_array_equal(out.y, boundary.y)
        np.testing.assert_array_equal(out.context.clamped[0],
                                      [True, False, True])
        dx = enc.encode_backward(np.ones(cfg.output_dim), out.context, tables)
        assert dx[0] == 0.0 and dx[2] == 0.0

    def test_batch_matches_single(self):
        cfg = self.small_config()
        tables = self.tables_for(cfg)
        rng = np.random.default_rng(9)
        xs = rng.uniform(0, 1, size=(7, 3))
        batch = enc.encode(xs, tables, cfg).y
        for i, x in enumerate(xs):
            np.testing.assert_array_equal(batch[i],
                                          enc.encode(x, tables, cfg).y)


class TestEncodeBackward:
    def setup_case(self, seed=0, mode=RAW, st_mix=1.0, n_dims=3):
        cfg = EncodingConfig(n_levels=4, table_size=2 ** 8, n_features=2,
                             base_resolution=2, finest_resolution=16,
                             n_dims=n_dims, st_mix=st_mix)
        rng = np.random.default_rng(seed)
        tables = HashTables.initialize(cfg, rng, dtype=np.float64)
        tables.values = rng.standard_normal(tables.values.shape)
        return cfg, tables, rng

    def test_zero_upstream(self):
        cfg, tables, _ = self.setup_case()
        out = enc.encode(np.array([0.3, 0.4, 0.5]), tables, cfg)
        dx = enc.encode_backward(np.zeros(cfg.output_dim), out.context, tables)
        np.testing.assert_array_equal(dx, 0.0)
        np.testing.assert_array_equal(tables.grads, 0.0)

    def interior_point(self, cfg, rng, margin=2e-3):
        specs = enc.resolution_schedule(cfg)
        while True:
            x = rng.uniform(0, 1, size=cfg.n_dims)
            ok = True
            for s in specs:
                f = x * s.resolution - np.floor(x * s.resolution)
                if (f < margin).any() or (f > 1 - margin).any():
                    ok = False
                    break
            if ok:
                return x

    # The raw forward is linear along each axis inside a cell, so central
    # differences are exact there; the smooth forward is curved and needs a
    # smaller step and a truncation allowance.  Straight-through mode
    # intentionally does not match finite differences of its own forward.
    @pytest.mark.parametrize("mode,h,tol", [(RAW, 1e-3 / 16, 1e-6),
                                            (SMOOTH, 1e-7, 1e-5)])
    def test_input_gradient_matches_fd(self, mode, h, tol):
        cfg, tables, rng = self.setup_case(seed=2)
        g = rng.standard_normal(cfg.output_dim)

        def loss(p):
            return float(g @ enc.encode(p, tables, cfg, mode=mode).y)

        for _ in range(20):
            x = self.interior_point(cfg, rng)
            out = enc.encode(x, tables, cfg, mode=mode)
            dx = enc.encode_backward(g, out.context, tables)
            for k in range(3):
                step = np.zeros(3)
                step[k] = h
                fd = (loss(x + step) - loss(x - step)) / (2 * h)
                assert abs(dx[k] - fd) < tol * max(abs(fd), 1e-6)

    def test_table_gradient_single_sample(self):
        cfg, tables, rng = self.setup_case(seed=3)
        cfg1 = EncodingConfig(n_levels=1, table_size=2 ** 8, n_features=2,
                              base_resolution=4, finest_resolution=4)
        tables1 = HashTables.initialize(cfg1, rng, dtype=np.float64)
        x = np.array([0.13, 0.57, 0.71])
        out = enc.encode(x, tables1, cfg1)
        dl = np.array([2.0, -3.0])
        enc.encode_backward(dl, out.context, tables1)
        ctx = out.context
        expected = np.zeros_like(tables1.grads)
        for c in range(cfg1.n_corners):
            expected[0, ctx.indices[0, 0, c]] += ctx.weights_used[0, 0, c] * dl
        np.testing.assert_allclose(tables1.grads, expected, rtol=0, atol=1e-15)

    def test_table_gradient_sparsity(self):
        cfg, tables, rng = self.setup_case(seed=4)
        x = rng.uniform(0.1, 0.9, size=(3, 3))
        out = enc.encode(x, tables, cfg)
        enc.encode_backward(rng.standard_normal((3, cfg.output_dim)),
                            out.context, tables)
        touched = set(zip(*np.nonzero((tables.grads != 0).any(axis=2))))
        allowed = set()
        for li in range(cfg.n_levels):
            for idx in np.unique(out.context.indices[:, li]):
                allowed.add((li, idx))
        assert touched <= allowed

    def test_shape_mismatch_rejected(self):
        cfg, tables, _ = self.setup_case()
        out = enc.encode(np.array([0.3, 0.4, 0.5]), tables, cfg)
        with pytest.raises(ValueError):
            enc.encode_backward(np.zeros(cfg.output_dim + 1), out.context,
                                tables)


class TestStraightThrough:
    def setup_tables(self, cfg, seed=0):
        rng = np.random.default_rng(seed)
        t = HashTables.initialize(cfg, rng, dtype=np.float64)
        t.values = rng.standard_normal(t.values.shape)
        return t, rng

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
    def test_forward_identity(self, lam):
        cfg = EncodingConfig(n_levels=4, table_size=2 ** 10, n_features=2,
                             base_resolution=2, finest_resolution=32,
                             st_mix=lam)
        rng = np.random.default_rng(0)
        tables = HashTables.initialize(cfg, rng, dtype=np.float64)
        # positive entries: no cancellation in the interpolated sum, so the
        # renormalization guard moves values by at most a few ulps
        tables.values = rng.uniform(0.1, 1.0, tables.values.shape)
        xs = rng.uniform(0, 1, size=(100, 3))
        y_raw = enc.encode(xs, tables, cfg, mode=RAW).y
        y_st = enc.encode(xs, tables, cfg, mode=STRAIGHT_THROUGH).y
        scale = np.maximum(np.abs(y_raw), 1e-30)
        assert np.max(np.abs(y_st - y_raw) / scale) < 1e-15

    def test_forward_identity_signed_tables(self):
        # signed entries cancel in the sum; the guard still only perturbs
        # at the scale of the individual terms
        cfg = EncodingConfig(n_levels=4, table_size=2 ** 10, n_features=2,
                             base_resolution=2, finest_resolution=32)
        tables, rng = self.setup_tables(cfg)
        xs = rng.uniform(0, 1, size=(100, 3))
        raw = enc.encode(xs, tables, cfg, mode=RAW)
        st = enc.encode(xs, tables, cfg, mode=STRAIGHT_THROUGH)
        term_scale = np.abs(raw.context.gathered).max()
        assert np.max(np.abs(st.y - raw.y)) < 1e-14 * term_scale

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
    def test_weight_gradient_scale_law(self, lam):
        cfg = EncodingConfig(n_levels=4, table_size=2 ** 10, n_features=2,
                             base_resolution=2, finest_resolution=32,
                             st_mix=lam)
        tables, rng = self.setup_tables(cfg, seed=1)
        xs = rng.uniform(0, 1, size=(50, 3))
        g = rng.standard_normal((50, cfg.output_dim))
        raw_ctx = enc.encode(xs, tables, cfg, mode=RAW).context
        st_ctx = enc.encode(xs, tables, cfg, mode=STRAIGHT_THROUGH).context
        wg_raw = enc.weight_gradients(g, raw_ctx)
        wg_st = enc.weight_gradients(g, st_ctx)
        law = wg_raw * (1.0 + lam * (np.pi / 2.0)
                        * np.sin(np.pi * raw_ctx.weights_raw))
        np.testing.assert_allclose(wg_st, law, rtol=1e-12, atol=1e-12)


class TestAnalyticJacobian:
    def make_case(self, seed=0, **kw):
        defaults = dict(n_levels=2, table_size=2 ** 8, n_features=1,
                        base_resolution=4, finest_resolution=8, n_dims=1)
        defaults.update(kw)
        cfg = EncodingConfig(**defaults)
        rng = np.random.default_rng(seed)
        tables = HashTables.initialize(cfg, rng, dtype=np.float64)
        tables.values = rng.standard_normal(tables.values.shape)
        return cfg, tables

    def test_piecewise_constant_within_cell(self):
        cfg, tables = self.make_case(seed=1)
        # sweep the interior of the cell [2/8, 3/8) of the finest level,
        # which is also interior to one coarse cell
        xs = np.linspace(2.0 / 8.0 + 1e-4, 3.0 / 8.0 - 1e-4, 100)
        jac = np.stack([enc.analytic_input_jacobian(np.array([x]), tables,
                                                    cfg, mode="raw")
                        for x in xs])
        spread = np.abs(jac - jac[0]).max()
        assert spread < 1e-10 * max(np.abs(jac[0]).max(), 1.0)

    def test_triangular_wave_slopes(self):
        cfg, tables = self.make_case(n_levels=1, base_resolution=4,
                                     finest_resolution=4)
        spec = enc.resolution_schedule(cfg)[0]
        assert spec.dense
        vals = tables.values[0, :, 0]
        for cell in range(4):
            x = np.array([(cell + 0.37) / 4.0])
            jac = enc.analytic_input_jacobian(x, tables, cfg, mode="raw")
            expected = (vals[cell + 1] - vals[cell]) * 4.0
            np.testing.assert_allclose(jac[0, 0], expected, rtol=1e-12)

    def test_constant_table_zero_jacobian(self):
        cfg, tables = self.make_case(n_dims=3, n_levels=3,
                                     finest_resolution=16)
        tables.values[:] = 0.731
        jac = enc.analytic_input_jacobian(np.array([0.31, 0.43, 0.87]),
                                          tables, cfg, mode="raw")
        np.testing.assert_allclose(jac, 0.0, atol=1e-12)

    def test_refuses_cell_face(self):
        cfg, tables = self.make_case()
        with pytest.raises(ValueError):
            enc.analytic_input_jacobian(np.array([0.25]), tables, cfg)

    def test_raw_jump_and_smoothed_vanishing_at_face(self):
        cfg, tables = self.make_case(seed=3, n_levels=1, base_resolution=8,
                                     finest_resolution=8)
        face = 3.0 / 8.0
        eps = 1e-8
        left = enc.analytic_input_jacobian(np.array([face - eps]), tables,
                                           cfg, mode="raw")
        right = enc.analytic_input_jacobian(np.array([face + eps]), tables,
                                            cfg, mode="raw")
        assert np.abs(left - right).max() > 0.0
        # the smoothing contribution (smoothed minus raw) dies at the face
        for x in (face - eps, face + eps):
            raw = enc.analytic_input_jacobian(np.array([x]), tables, cfg,
                                              mode="raw")
            smooth = enc.analytic_input_jacobian(np.array([x]), tables, cfg,
                                                 mode="smoothed")
            assert np.abs(smooth - raw).max() < 1e-5 * np.abs(raw).max()


class TestDerivativeProfile:
    def test_constant_table_flat(self):
        rows = enc.derivative_profile_1d(np.full(16, 2.5), 8, 32, mode="raw")
        for _, h, dh, _ in rows:
            assert h == pytest.approx(2.5)
            assert dh == 0.0

    def test_alternating_table_slopes(self):
        table = np.array([0.0, 1.0] * 8)
        rows = enc.derivative_profile_1d(table, 8, 64, mode="raw")
        for x, _, dh, _ in rows:
            cell = int(x * 8)
            expected = 8.0 if cell % 2 == 0 else -8.0
            assert dh == pytest.approx(expected)

    def test_row_count_and_mode_column(self):
        rows = enc.derivative_profile_1d(np.arange(16.0), 8, 57,
                                         mode="smoothed")
        assert len(rows) == 57
        assert all(r[3] == "smoothed" for r in rows)

    def test_smoothed_scales_raw(self):
        table = np.arange(16.0)
        raw = enc.derivative_profile_1d(table, 8, 40, mode="raw")
        smooth = enc.derivative_profile_1d(table, 8, 40, mode="smoothed",
                                           st_mix=2.0)
        for (x, _, dr, _), (_, _, ds, _) in zip(raw, smooth):
            f = x * 8 - math.floor(x * 8)
            scale = 1.0 + 2.0 * (math.pi / 2.0) * math.sin(math.pi * f)
            assert ds == pytest.approx(dr * scale, rel=1e-12)

    def test_csv_emitter(self, tmp_path):
        rows = enc.derivative_profile_1d(np.arange(16.0), 8, 5, mode="raw")
        path = tmp_path / "profile.csv"
        enc.write_profile_csv(rows, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x,h,dh_dx,mode"
        assert len(lines) == 6
