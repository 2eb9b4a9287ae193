import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualfield.field import (BlendState, CheckpointError, DualFieldModel, FeatureGrid,
                             blend_weight, decode, fuse, init_model, load_checkpoint,
                             query, sample_features, save_checkpoint, with_blend)


def random_grid(rng, res=(5, 5, 5)):
    return FeatureGrid(rng.normal(0, 1, res).astype(np.float32),
                       rng.normal(0, 1, res + (3,)).astype(np.float32))


def trilerp_oracle(grid: FeatureGrid, x):
    """Independent 8-corner weighted sum, coded from the definition."""
    nx, ny, nz = grid.resolution
    u = (np.asarray(x, dtype=np.float64) + 1.0) / 2.0 * (np.array([nx, ny, nz]) - 1.0)
    i0 = np.minimum(np.floor(u).astype(int), [nx - 2, ny - 2, nz - 2])
    i0 = np.maximum(i0, 0)
    f = u - i0
    h_sigma = 0.0
    h_c = np.zeros(3)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((f[0] if dx else 1 - f[0])
                     * (f[1] if dy else 1 - f[1])
                     * (f[2] if dz else 1 - f[2]))
                h_sigma += w * float(grid.density[i0[0] + dx, i0[1] + dy, i0[2] + dz])
                h_c += w * grid.color[i0[0] + dx, i0[1] + dy, i0[2] + dz].astype(np.float64)
    return h_sigma, h_c


class TestSampleFeatures:
    def test_vertex_values_exact(self, rng):
        # N=5 puts vertices on exactly representable coordinates.
        grid = random_grid(rng)
        coords = np.linspace(-1.0, 1.0, 5)
        for i, j, k in [(0, 0, 0), (2, 3, 1), (4, 4, 4), (1, 0, 3)]:
            h_sigma, h_c = sample_features(grid, [coords[i], coords[j], coords[k]])
            assert h_sigma == float(grid.density[i, j, k])
            np.testing.assert_array_equal(h_c, grid.color[i, j, k].astype(np.float64))

    def test_cell_center_is_corner_mean(self, rng):
        grid = random_grid(rng, res=(2, 2, 2))
        h_sigma, h_c = sample_features(grid, [0.0, 0.0, 0.0])
        assert h_sigma == pytest.approx(float(grid.density.astype(np.float64).mean()), abs=1e-12)
        np.testing.assert_allclose(
            h_c, grid.color.astype(np.float64).reshape(-1, 3).mean(axis=0), atol=1e-12)

    def test_matches_independent_oracle(self, rng):
        for _ in range(25):
            grid = random_grid(rng, res=(2, 2, 2))
            x = rng.uniform(-1, 1, 3)
            h_sigma, h_c = sample_features(grid, x)
            ref_sigma, ref_c = trilerp_oracle(grid, x)
            assert h_sigma == pytest.approx(ref_sigma, abs=1e-12)
            np.testing.assert_allclose(h_c, ref_c, atol=1e-12)

    def test_continuity_across_cell_boundary(self, rng):
        grid = random_grid(rng)
        x_edge = np.linspace(-1.0, 1.0, 5)[2]
        lo, _ = sample_features(grid, [x_edge - 1e-9, 0.1, -0.2])
        hi, _ = sample_features(grid, [x_edge + 1e-9, 0.1, -0.2])
        assert lo == pytest.approx(hi, abs=1e-7)

    def test_outside_domain_rejected(self, rng):
        grid = random_grid(rng)
        with pytest.raises(ValueError):
            sample_features(grid, [1.5, 0.0, 0.0])


class TestBlendWeight:
    def test_zero_at_start(self):
        assert blend_weight(0, 0.1, 0.005) == 0.0

    def test_default_constants_value(self):
        # Oracle: high-precision tanh(1) via the math library on the exact product.
        expected = 0.1 * math.tanh(0.005 * 200)
        assert blend_weight(200, 0.1, 0.005) == pytest.approx(expected, abs=1e-15)
        assert blend_weight(200, 0.1, 0.005) == pytest.approx(0.07615941559557649, abs=1e-12)

    def test_saturates_at_cap(self):
        assert blend_weight(15000, 0.1, 0.005) == pytest.approx(0.1, abs=1e-9)

    @given(st.floats(0.01, 1.0), st.floats(1e-4, 0.5),
           st.integers(0, 10_000), st.integers(1, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_strictly_increasing_and_bounded(self, w_max, rate, t, dt):
        lo = blend_weight(t, w_max, rate)
        hi = blend_weight(t + dt, w_max, rate)
        if rate * (t + dt) < 19:  # beyond this tanh is saturated in float64
            assert hi > lo
        assert hi <= w_max

    def test_preconditions(self):
        with pytest.raises(ValueError):
            blend_weight(-1, 0.1, 0.005)
        with pytest.raises(ValueError):
            blend_weight(0, 1.5, 0.005)
        with pytest.raises(ValueError):
            blend_weight(0, 0.1, 0.0)


class TestFuse:
    def test_endpoints_exact(self, rng):
        a = rng.normal(0, 1, 3)
        b = rng.normal(0, 1, 3)
        np.testing.assert_array_equal(fuse(a, b, 0.0), a)
        np.testing.assert_array_equal(fuse(a, b, 1.0), b)

    def test_hand_value(self):
        assert fuse(1.0, 2.0, 0.1) == pytest.approx(1.1, abs=1e-15)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_linearity(self, a, b, w):
        assert fuse(a, b, w) == pytest.approx(a + w * (b - a), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse(np.zeros(3), np.zeros(4), 0.5)


class TestDecode:
    def test_zero_inputs(self):
        sigma, rgb = decode(0.0, np.zeros(3))
        assert sigma == 1.0
        np.testing.assert_array_equal(rgb, [0.5, 0.5, 0.5])

    def test_truncation(self):
        sigma, _ = decode(100.0, np.zeros(3))
        assert sigma == pytest.approx(math.exp(15.0))
        assert np.isfinite(sigma)

    def test_log_inverse(self):
        sigma, _ = decode(math.log(2.0), np.zeros(3))
        assert sigma == pytest.approx(2.0, abs=1e-12)

    def test_ranges(self, rng):
        h_sigma = rng.normal(0, 20, 100)
        h_c = rng.normal(0, 20, (100, 3))
        sigma, rgb = decode(h_sigma, h_c)
        assert np.all(sigma > 0.0)
        assert np.all((rgb > 0.0) & (rgb < 1.0))


class TestQuery:
    def make_model(self, rng, t=500):
        res = (5, 5, 5)
        return DualFieldModel(static=random_grid(rng, res), dynamic=random_grid(rng, res),
                              blend=BlendState(t=t))

    def test_gamma_zero_is_static_only(self, rng):
        model = self.make_model(rng)
        for _ in range(10):
            x = rng.uniform(-1, 1, 3)
            sigma, rgb = query(model, x, gamma=0.0)
            hs, hc = sample_features(model.static, x)
            ref_sigma, ref_rgb = decode(hs, hc)
            assert sigma == ref_sigma
            np.testing.assert_array_equal(rgb, ref_rgb)

    def test_schedule_start_ignores_dynamic(self, rng):
        model = self.make_model(rng, t=0)
        x = rng.uniform(-1, 1, 3)
        sigma, rgb = query(model, x, gamma=0.7)
        hs, hc = sample_features(model.static, x)
        ref_sigma, ref_rgb = decode(hs, hc)
        assert sigma == ref_sigma
        np.testing.assert_array_equal(rgb, ref_rgb)

    def test_gamma_scaling_composes(self, rng):
        # Half retreat on a saturated schedule: effective weight w_max/2.
        model = self.make_model(rng, t=10_000_000)
        x = rng.uniform(-1, 1, 3)
        sigma, rgb = query(model, x, gamma=0.5)
        hs_sigma, hs_c = sample_features(model.static, x)
        hd_sigma, hd_c = sample_features(model.dynamic, x)
        w = 0.5 * model.blend.w_sigma()
        ref_sigma, ref_rgb = decode(fuse(hs_sigma, hd_sigma, w), fuse(hs_c, hd_c, w))
        assert sigma == pytest.approx(ref_sigma, abs=1e-12)
        np.testing.assert_allclose(rgb, ref_rgb, atol=1e-12)

    def test_gamma_out_of_range(self, rng):
        model = self.make_model(rng)
        with pytest.raises(ValueError):
            query(model, np.zeros(3), gamma=1.5)


class TestAnalyticGradientOfPointChain:
    def test_density_path_matches_finite_differences(self, rng):
        # d(decode . fuse . trilerp)/d(dynamic vertex) at one point, derived by
        # hand: interp weight * blend weight * activation slope.
        for _ in range(5):
            model = DualFieldModel(static=random_grid(rng, (3, 3, 3)),
                                   dynamic=random_grid(rng, (3, 3, 3)),
                                   blend=BlendState(t=int(rng.integers(100, 3000))))
            x = rng.uniform(-0.9, 0.9, 3)
            w_eff = model.blend.w_sigma()
            for idx in [(0, 0, 0), (1, 1, 1), (2, 1, 0)]:
                orig = model.dynamic.density[idx]
                h = 1e-4
                model.dynamic.density[idx] = np.float32(orig + h)
                sp, _ = query(model, x)
                hi = float(model.dynamic.density[idx])
                model.dynamic.density[idx] = np.float32(orig - h)
                sm, _ = query(model, x)
                lo = float(model.dynamic.density[idx])
                model.dynamic.density[idx] = orig
                fd = (sp - sm) / (hi - lo)

                sigma0, _ = query(model, x)
                # interp weight of this vertex obtained by linearity probing
                probe = FeatureGrid.zeros((3, 3, 3))
                probe.density[idx] = 1.0
                tw, _ = sample_features(probe, x)
                analytic = tw * w_eff * sigma0  # d exp(h)/dh = sigma
                if abs(fd) > 1e-12 or abs(analytic) > 1e-12:
                    assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_color_path_matches_finite_differences(self, rng):
        # Color slope: interp weight * blend weight * rgb * (1 - rgb).
        model = DualFieldModel(static=random_grid(rng, (3, 3, 3)),
                               dynamic=random_grid(rng, (3, 3, 3)),
                               blend=BlendState(t=400))
        x = rng.uniform(-0.9, 0.9, 3)
        w_eff = model.blend.w_c()
        for idx in [(0, 0, 0, 0), (1, 2, 1, 1), (2, 2, 2, 2)]:
            orig = model.dynamic.color[idx]
            h = 1e-4
            model.dynamic.color[idx] = np.float32(orig + h)
            _, cp = query(model, x)
            hi = float(model.dynamic.color[idx])
            model.dynamic.color[idx] = np.float32(orig - h)
            _, cm = query(model, x)
            lo = float(model.dynamic.color[idx])
            model.dynamic.color[idx] = orig
            fd = (cp[idx[3]] - cm[idx[3]]) / (hi - lo)

            _, rgb0 = query(model, x)
            probe = FeatureGrid.zeros((3, 3, 3))
            probe.color[idx] = 1.0
            _, tw_c = sample_features(probe, x)
            analytic = tw_c[idx[3]] * w_eff * rgb0[idx[3]] * (1.0 - rgb0[idx[3]])
            if abs(fd) > 1e-12 or abs(analytic) > 1e-12:
                assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        model = DualFieldModel(static=random_grid(rng), dynamic=random_grid(rng),
                               blend=BlendState(w_max_sigma=0.2, w_max_c=0.15,
                                                rate=0.01, t=1234, gamma=0.7, t0=2.0))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.static.density, model.static.density)
        np.testing.assert_array_equal(loaded.static.color, model.static.color)
        np.testing.assert_array_equal(loaded.dynamic.density, model.dynamic.density)
        np.testing.assert_array_equal(loaded.dynamic.color, model.dynamic.color)
        assert loaded.blend == model.blend

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "short.ckpt"
        path.write_bytes(b"DFN1\x04\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path, rng):
        model = init_model((4, 4, 4))
        path = tmp_path / "cut.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_header_layout(self, tmp_path):
        model = init_model((4, 4, 4))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        assert blob[:4] == b"DFN1"
        assert int.from_bytes(blob[4:8], "little") == 4
        assert blob[16] == 0x03  # both grids present
        # header 65 bytes + 2 grids * (64 + 192) floats * 4 bytes
        assert len(blob) == 65 + 2 * (64 + 192) * 4


class TestGridValidation:
    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            FeatureGrid(np.zeros((1, 4, 4), np.float32), np.zeros((1, 4, 4, 3), np.float32))

    def test_rejects_non_finite(self):
        dens = np.zeros((2, 2, 2), np.float32)
        dens[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureGrid(dens, np.zeros((2, 2, 2, 3), np.float32))

    def test_model_requires_matching_resolution(self):
        with pytest.raises(ValueError):
            DualFieldModel(FeatureGrid.zeros((4, 4, 4)), FeatureGrid.zeros((5, 5, 5)),
                           BlendState())

    def test_with_blend_shares_grids(self):
        model = init_model((4, 4, 4))
        other = with_blend(model, t=42)
        assert other.blend.t == 42
        assert other.static is model.static
