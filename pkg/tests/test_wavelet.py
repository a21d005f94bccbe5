import numpy as np
import pytest

from vesselseg import wavelet

INV_SQRT2 = 1.0 / np.sqrt(2.0)


def circ_corr(x, taps):
    """Brute-force forward-anchored circular correlation (test oracle)."""
    n = len(x)
    return np.array(
        [sum(taps[k] * x[(i + k) % n] for k in range(len(taps))) for i in range(n)]
    )


class TestHaarFilters:
    def test_level1_is_orthonormal_pair(self):
        f = wavelet.haar_filters(1)
        assert np.allclose(f.low, [INV_SQRT2, INV_SQRT2])
        assert np.allclose(f.high, [INV_SQRT2, -INV_SQRT2])
        assert np.isclose((f.low**2).sum(), 1.0)

    def test_level2_interleaves_one_zero(self):
        f = wavelet.haar_filters(2)
        assert np.allclose(f.low, [INV_SQRT2, 0.0, INV_SQRT2])
        assert np.allclose(f.high, [INV_SQRT2, 0.0, -INV_SQRT2])

    def test_level3_from_double_upsampling(self):
        f = wavelet.haar_filters(3)
        assert np.allclose(f.low, [INV_SQRT2, 0, 0, 0, INV_SQRT2])

    def test_upsampling_rule_holds_per_level(self):
        # filter at level j+1 must equal level-j taps with zeros at odd k
        for j in (1, 2, 3):
            lo = wavelet.haar_filters(j).low
            up = wavelet.haar_filters(j + 1).low
            assert np.allclose(up[::2], lo)
            assert np.allclose(up[1::2], 0.0)

    def test_reconstruction_filters_are_time_reversed(self):
        for j in (1, 2, 3):
            dec = wavelet.haar_filters(j)
            rec = wavelet.reconstruction_filters(j)
            assert np.allclose(rec.low, dec.low[::-1])
            assert np.allclose(rec.high, dec.high[::-1])

    def test_bad_level(self):
        with pytest.raises(ValueError):
            wavelet.haar_filters(0)


class TestSwt1d:
    def test_constant_kills_highpass(self):
        d, a = wavelet.swt1d(np.full(4, 3.0), 1)
        assert np.allclose(d[0], 0.0)
        assert np.allclose(a, 3.0 * np.sqrt(2.0))

    def test_alternating_signal_hand_values(self):
        d, a = wavelet.swt1d(np.array([2.0, 0.0, 2.0, 0.0]), 1)
        s = np.sqrt(2.0)
        assert np.allclose(a, [s, s, s, s])
        assert np.allclose(d[0], [s, -s, s, -s])

    def test_matches_brute_force_convolution(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=12)
        d, a = wavelet.swt1d(x, 2)
        f1, f2 = wavelet.haar_filters(1), wavelet.haar_filters(2)
        a1 = circ_corr(x, f1.low)
        assert np.allclose(d[0], circ_corr(x, f1.high), atol=1e-12)
        assert np.allclose(d[1], circ_corr(a1, f2.high), atol=1e-12)
        assert np.allclose(a, circ_corr(a1, f2.low), atol=1e-12)

    def test_shift_equivariance_exact(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=16)
        for s in (1, 3, 7):
            d0, a0 = wavelet.swt1d(x, 2)
            d1, a1 = wavelet.swt1d(np.roll(x, s), 2)
            assert np.array_equal(np.roll(a0, s), a1)
            for j in range(2):
                assert np.array_equal(np.roll(d0[j], s), d1[j])

    def test_energy_identity_level1(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=32)
        d, a = wavelet.swt1d(x, 1)
        total = (a**2).sum() + (d[0] ** 2).sum()
        assert abs(total - 2.0 * (x**2).sum()) <= 1e-10

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            wavelet.swt1d(np.array([1.0]), 1)


class TestIswt1d:
    def test_round_trip_one_level(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=16)
        d, a = wavelet.swt1d(x, 1)
        assert np.abs(wavelet.iswt1d(d, a) - x).max() <= 1e-10

    def test_round_trip_two_levels(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=32)
        d, a = wavelet.swt1d(x, 2)
        assert np.abs(wavelet.iswt1d(d, a) - x).max() <= 1e-10

    def test_zero_coefficients_give_zero_signal(self):
        out = wavelet.iswt1d([np.zeros(8)], np.zeros(8))
        assert np.array_equal(out, np.zeros(8))

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            wavelet.iswt1d([np.zeros(8)], np.zeros(4))


class TestSwt2d:
    def test_constant_plane_zero_details(self):
        levels = wavelet.swt2d(np.full((8, 8), 2.5), 2)
        for lv in levels:
            assert np.allclose(lv.detail_v, 0.0)
            assert np.allclose(lv.detail_h, 0.0)
            assert np.allclose(lv.detail_d, 0.0)

    def test_row_varying_plane_lands_in_dv(self):
        # values change with the row index only: low along rows, high along
        # columns, so only dV responds
        plane = np.tile(np.arange(8.0)[:, None], (1, 8))
        lv = wavelet.swt2d(plane, 1)[0]
        assert np.abs(lv.detail_v).max() > 0.5
        assert np.allclose(lv.detail_h, 0.0, atol=1e-12)
        assert np.allclose(lv.detail_d, 0.0, atol=1e-12)

    def test_separable_oracle(self):
        rng = np.random.default_rng(5)
        plane = rng.normal(size=(6, 7))
        lv = wavelet.swt2d(plane, 1)[0]
        f = wavelet.haar_filters(1)
        row_low = np.array([circ_corr(r, f.low) for r in plane])
        row_high = np.array([circ_corr(r, f.high) for r in plane])
        dv = np.array([circ_corr(c, f.high) for c in row_low.T]).T
        dh = np.array([circ_corr(c, f.low) for c in row_high.T]).T
        dd = np.array([circ_corr(c, f.high) for c in row_high.T]).T
        aa = np.array([circ_corr(c, f.low) for c in row_low.T]).T
        assert np.allclose(lv.detail_v, dv, atol=1e-12)
        assert np.allclose(lv.detail_h, dh, atol=1e-12)
        assert np.allclose(lv.detail_d, dd, atol=1e-12)
        assert np.allclose(lv.approx, aa, atol=1e-12)

    def test_2d_shift_equivariance_exact(self):
        rng = np.random.default_rng(6)
        plane = rng.normal(size=(8, 12))
        base = wavelet.swt2d(plane, 2)
        shifted = wavelet.swt2d(np.roll(plane, (3, 5), axis=(0, 1)), 2)
        for lv0, lv1 in zip(base, shifted):
            for name in ("approx", "detail_v", "detail_h", "detail_d"):
                a = np.roll(getattr(lv0, name), (3, 5), axis=(0, 1))
                assert np.array_equal(a, getattr(lv1, name))

    def test_degenerate_dims(self):
        with pytest.raises(ValueError):
            wavelet.swt2d(np.ones((1, 8)), 1)


class TestIswt2d:
    def test_zero_coefficients(self):
        levels = wavelet.swt2d(np.zeros((4, 4)), 1)
        assert np.array_equal(wavelet.iswt2d(levels), np.zeros((4, 4)))

    def test_round_trip_one_level_8x8(self):
        rng = np.random.default_rng(7)
        p = rng.normal(size=(8, 8))
        assert np.abs(wavelet.iswt2d(wavelet.swt2d(p, 1)) - p).max() <= 1e-10

    def test_round_trip_two_levels_16x16(self):
        rng = np.random.default_rng(8)
        p = rng.normal(size=(16, 16))
        assert np.abs(wavelet.iswt2d(wavelet.swt2d(p, 2)) - p).max() <= 1e-10

    def test_empty_level_list(self):
        with pytest.raises(ValueError):
            wavelet.iswt2d([])


class TestBuildInputStack:
    @staticmethod
    def _green_and_fov(size=32, seed=9):
        rng = np.random.default_rng(seed)
        gy, gx = np.mgrid[0:size, 0:size]
        fov = (gx - size / 2) ** 2 + (gy - size / 2) ** 2 <= (size / 2 - 1) ** 2
        plane = rng.normal(size=(size, size))
        mu, sd = plane[fov].mean(), plane[fov].std()
        return (plane - mu) / sd, fov

    def test_base_mode_single_channel(self):
        green, fov = self._green_and_fov()
        stack = wavelet.build_input_stack(green, fov, "base")
        assert stack.channels.shape[0] == 1
        assert np.array_equal(stack.channels[0], green)

    @pytest.mark.parametrize("mode,count", [("d1", 4), ("d2", 4), ("d1d2", 7)])
    def test_channel_counts(self, mode, count):
        green, fov = self._green_and_fov()
        stack = wavelet.build_input_stack(green, fov, mode)
        assert stack.channels.shape[0] == count
        assert stack.mode == mode

    def test_channels_normalized_over_fov(self):
        green, fov = self._green_and_fov()
        stack = wavelet.build_input_stack(green, fov, "d1d2")
        for ch in stack.channels:
            assert abs(ch[fov].mean()) <= 1e-8
            assert abs(ch[fov].var() - 1.0) <= 1e-6

    def test_d2_channels_come_from_level2(self):
        green, fov = self._green_and_fov()
        stack = wavelet.build_input_stack(green, fov, "d2")
        lv2 = wavelet.swt2d(green, 2)[1]
        from vesselseg.imageio import normalize

        assert np.allclose(stack.channels[1], normalize(lv2.detail_v, fov))
        assert np.allclose(stack.channels[2], normalize(lv2.detail_h, fov))
        assert np.allclose(stack.channels[3], normalize(lv2.detail_d, fov))

    def test_too_small_image_rejected(self):
        green, fov = self._green_and_fov()
        with pytest.raises(ValueError, match="too small"):
            wavelet.build_input_stack(green[:3, :3], fov[:3, :3], "d2")

    def test_unknown_mode(self):
        green, fov = self._green_and_fov()
        with pytest.raises(ValueError, match="mode"):
            wavelet.build_input_stack(green, fov, "d3")


def test_perfect_reconstruction_sweep():
    rng = np.random.default_rng(10)
    for _ in range(20):
        h = int(rng.integers(4, 65))
        w = int(rng.integers(4, 65))
        p = rng.normal(size=(h, w))
        for levels in (1, 2):
            back = wavelet.iswt2d(wavelet.swt2d(p, levels))
            assert np.abs(back - p).max() <= 1e-10
