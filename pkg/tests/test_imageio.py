import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vesselseg import imageio


class TestReadPnm:
    def test_p5_basic(self):
        data = b"P5 2 2 255\n" + bytes([0, 128, 255, 7])
        img = imageio.read_pnm(data)
        assert img.shape == (2, 2)
        assert img.dtype == np.uint8
        assert img.tolist() == [[0, 128], [255, 7]]

    def test_p6_single_pixel(self):
        img = imageio.read_pnm(b"P6 1 1 255\n" + bytes([10, 20, 30]))
        assert img.shape == (1, 1, 3)
        assert img[0, 0].tolist() == [10, 20, 30]

    def test_16bit_big_endian(self):
        img = imageio.read_pnm(b"P5 1 1 65535\n" + bytes([0x01, 0x02]))
        assert img.dtype == np.uint16
        assert img[0, 0] == 0x0102

    def test_header_comments_skipped(self):
        data = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([1, 2])
        assert imageio.read_pnm(data).tolist() == [[1, 2]]

    def test_rejects_ascii_variant(self):
        with pytest.raises(ValueError, match="magic"):
            imageio.read_pnm(b"P2\n1 1\n255\n0")

    def test_rejects_unusual_maxval(self):
        with pytest.raises(ValueError, match="maxval"):
            imageio.read_pnm(b"P5 1 1 4095\n" + bytes([0, 0]))

    def test_truncated_payload(self):
        with pytest.raises(ValueError, match="payload"):
            imageio.read_pnm(b"P5 2 2 255\n" + bytes([1, 2, 3]))

    def test_surplus_payload(self):
        with pytest.raises(ValueError, match="payload"):
            imageio.read_pnm(b"P5 1 1 255\n" + bytes([1, 2]))

    def test_malformed_header(self):
        with pytest.raises(ValueError):
            imageio.read_pnm(b"P5 2 x 255\n" + bytes([0] * 4))


class TestWritePnm:
    def test_gray_single_sample(self):
        out = imageio.write_pnm(np.zeros((1, 1), dtype=np.uint8))
        assert out == b"P5\n1 1\n255\n" + bytes([0])

    def test_rgb_two_pixels(self):
        img = np.arange(6, dtype=np.uint8).reshape(1, 2, 3)
        out = imageio.write_pnm(img)
        assert out == b"P6\n2 1\n255\n" + bytes(range(6))

    def test_rejects_bad_dtype(self):
        with pytest.raises(ValueError, match="dtype"):
            imageio.write_pnm(np.zeros((2, 2), dtype=np.float64))


@st.composite
def _images(draw):
    h = draw(st.integers(1, 12))
    w = draw(st.integers(1, 12))
    channels = draw(st.sampled_from([1, 3]))
    depth = draw(st.sampled_from([8, 16]))
    dtype = np.uint8 if depth == 8 else np.uint16
    hi = 2**depth
    shape = (h, w) if channels == 1 else (h, w, 3)
    flat = draw(
        st.lists(
            st.integers(0, hi - 1),
            min_size=int(np.prod(shape)),
            max_size=int(np.prod(shape)),
        )
    )
    return np.array(flat, dtype=dtype).reshape(shape)


@settings(max_examples=60, deadline=None)
@given(_images())
def test_round_trip_bit_exact(img):
    data = imageio.write_pnm(img)
    back = imageio.read_pnm(data)
    assert back.dtype == img.dtype
    assert np.array_equal(back, img)
    assert imageio.write_pnm(back) == data


class TestGreenChannel:
    def test_rgb_picks_green(self):
        img = np.array([[[10, 20, 30]]], dtype=np.uint8)
        assert imageio.green_channel(img)[0, 0] == 20.0

    def test_grayscale_identity(self):
        img = np.array([[5, 6], [7, 8]], dtype=np.uint8)
        assert np.array_equal(imageio.green_channel(img), img.astype(float))

    def test_2x2_green_values(self):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        img[:, :, 1] = [[1, 2], [3, 4]]
        assert imageio.green_channel(img).tolist() == [[1, 2], [3, 4]]


class TestNormalize:
    def test_two_point_symmetry(self):
        out = imageio.normalize(np.array([[0.0, 2.0]]))
        assert np.allclose(out, [[-1.0, 1.0]])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        plane = rng.normal(size=(6, 6))
        once = imageio.normalize(plane)
        assert np.allclose(imageio.normalize(once), once, atol=1e-10)

    def test_statistics_oracle(self):
        # recompute mean/population-std independently on a random plane
        rng = np.random.default_rng(1)
        plane = rng.uniform(5.0, 9.0, size=(8, 8))
        out = imageio.normalize(plane)
        flat = out.reshape(-1)
        mu = sum(flat) / flat.size
        var = sum((v - mu) ** 2 for v in flat) / flat.size
        assert abs(mu) <= 1e-12
        assert abs(var - 1.0) <= 1e-10

    def test_masked_statistics_applied_everywhere(self):
        plane = np.array([[1.0, 3.0], [100.0, 200.0]])
        mask = np.array([[True, True], [False, False]])
        out = imageio.normalize(plane, mask)
        # masked stats: mean 2, std 1
        assert np.allclose(out[0], [-1.0, 1.0])
        assert np.allclose(out[1], [98.0, 198.0])

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        plane = rng.normal(size=(5, 7))
        a = imageio.normalize(plane)
        b = imageio.normalize(3.7 * plane)
        assert np.allclose(a, b, atol=1e-10)

    def test_constant_region_errors(self):
        with pytest.raises(ValueError, match="constant"):
            imageio.normalize(np.ones((4, 4)))

    def test_mask_shape_mismatch(self):
        with pytest.raises(ValueError):
            imageio.normalize(np.ones((4, 4)), np.ones((3, 3), dtype=bool))


class TestPadZero:
    def test_zero_margins_identity(self):
        plane = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(imageio.pad_zero(plane, 0, 0, 0, 0), plane)

    def test_single_pixel(self):
        out = imageio.pad_zero(np.array([[5.0]]), 1, 1, 1, 1)
        expected = np.zeros((3, 3))
        expected[1, 1] = 5.0
        assert np.array_equal(out, expected)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(0, 5), st.integers(0, 5), st.integers(0, 5), st.integers(0, 5),
        st.integers(1, 6), st.integers(1, 6),
    )
    def test_sum_and_interior_preserved(self, left, right, top, bottom, h, w):
        rng = np.random.default_rng(42)
        plane = rng.normal(size=(h, w))
        out = imageio.pad_zero(plane, left, right, top, bottom)
        assert out.shape == (h + top + bottom, w + left + right)
        assert np.array_equal(out[top : top + h, left : left + w], plane)
        assert out.sum() == pytest.approx(plane.sum(), abs=1e-12)

    def test_negative_margin_rejected(self):
        with pytest.raises(ValueError):
            imageio.pad_zero(np.ones((2, 2)), -1, 0, 0, 0)


class TestMaskAndPlaneCodecs:
    def test_fov_threshold_at_128(self):
        img = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        bits = imageio.read_fov_mask(imageio.write_pnm(img))
        assert bits.tolist() == [[False, False], [True, True]]

    def test_fov_all_outside_rejected(self):
        img = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(ValueError, match="no inside"):
            imageio.read_fov_mask(imageio.write_pnm(img))

    def test_probability_plane_round_trip(self):
        rng = np.random.default_rng(3)
        probs = rng.random((4, 5))
        back = imageio.read_probability_plane(imageio.write_probability_plane(probs))
        assert np.abs(back - probs).max() <= 0.5 / 65535

    def test_binary_plane_round_trip(self):
        plane = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        data = imageio.write_binary_plane(plane)
        assert np.array_equal(imageio.read_binary_plane(data), plane)
