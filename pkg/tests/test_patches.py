import numpy as np
import pytest

from vesselseg import patches
from vesselseg.wavelet import InputStack


def _toy_image(size=48, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    stack = InputStack(channels=rng.normal(size=(channels, size, size)), mode="base")
    labels = rng.integers(0, 2, size=(size, size)).astype(np.float64)
    fov = np.ones((size, size), dtype=bool)
    return stack, labels, fov


class TestSampleTrainingPatches:
    def test_requested_count(self):
        stack, labels, fov = _toy_image()
        rng = np.random.default_rng(1)
        out = patches.sample_training_patches(stack, labels, fov, 2750, rng)
        assert len(out) == 2750

    def test_single_possible_placement(self):
        stack, labels, fov = _toy_image(size=32)
        rng = np.random.default_rng(2)
        (pair,) = patches.sample_training_patches(stack, labels, fov, 1, rng)
        assert pair.origin == (0, 0)
        assert pair.input.shape == (2, 88, 88)
        assert pair.target.shape == (32, 32)

    def test_deterministic_given_seed(self):
        stack, labels, fov = _toy_image()
        a = patches.sample_training_patches(stack, labels, fov, 50, np.random.default_rng(7))
        b = patches.sample_training_patches(stack, labels, fov, 50, np.random.default_rng(7))
        assert [p.origin for p in a] == [p.origin for p in b]
        c = patches.sample_training_patches(stack, labels, fov, 50, np.random.default_rng(8))
        assert [p.origin for p in a] != [p.origin for p in c]

    def test_windows_inside_image_and_aligned(self):
        stack, labels, fov = _toy_image(size=40)
        rng = np.random.default_rng(3)
        for pair in patches.sample_training_patches(stack, labels, fov, 200, rng):
            r, c = pair.origin
            assert 0 <= r <= 40 - 32 and 0 <= c <= 40 - 32
            assert np.array_equal(pair.target, labels[r : r + 32, c : c + 32])
            # the input center crop must equal the unpadded image content
            assert np.array_equal(
                pair.input[:, 28:60, 28:60], stack.channels[:, r : r + 32, c : c + 32]
            )

    def test_context_margin_is_zero_padding(self):
        stack, labels, fov = _toy_image(size=32)
        rng = np.random.default_rng(4)
        (pair,) = patches.sample_training_patches(stack, labels, fov, 1, rng)
        assert np.array_equal(pair.input[:, :28, :], np.zeros((2, 28, 88)))
        assert np.array_equal(pair.input[:, :, :28], np.zeros((2, 88, 28)))

    def test_image_smaller_than_window(self):
        stack, labels, fov = _toy_image(size=20)
        with pytest.raises(ValueError, match="smaller"):
            patches.sample_training_patches(stack, labels, fov, 1, np.random.default_rng(0))


class TestRotateBlock:
    def test_zero_turns_identity(self):
        block = np.arange(12.0).reshape(3, 2, 2)
        assert np.array_equal(patches.rotate_block(block, 0), block)

    def test_quarter_turn_permutation_oracle(self):
        plane = np.array([["a", "b"], ["c", "d"]])
        out = patches.rotate_block(plane, 1)
        assert out.tolist() == [["b", "d"], ["a", "c"]]

    def test_inverse_pair(self):
        rng = np.random.default_rng(5)
        block = rng.normal(size=(3, 6, 6))
        assert np.array_equal(
            patches.rotate_block(patches.rotate_block(block, 1), 3), block
        )

    def test_z4_group_action(self):
        rng = np.random.default_rng(6)
        block = rng.normal(size=(2, 5, 5))
        for a in range(4):
            for b in range(4):
                lhs = patches.rotate_block(patches.rotate_block(block, b), a)
                rhs = patches.rotate_block(block, (a + b) % 4)
                assert np.array_equal(lhs, rhs)


class TestAugmentRotations:
    @staticmethod
    def _pairs(n=5, seed=0):
        rng = np.random.default_rng(seed)
        return [
            patches.PatchPair(
                input=rng.normal(size=(2, 88, 88)),
                target=rng.integers(0, 2, size=(32, 32)).astype(float),
                origin=(i, i),
            )
            for i in range(n)
        ]

    def test_quadruples_count(self):
        out = patches.augment_rotations(self._pairs(6), np.random.default_rng(0))
        assert len(out) == 24

    def test_orbit_closure_multiset(self):
        base = self._pairs(3)
        out = patches.augment_rotations(base, np.random.default_rng(1))
        expected = set()
        for p in base:
            for r in range(4):
                expected.add(patches.rotate_block(p.input, r).tobytes())
        got = {p.input.tobytes() for p in out}
        assert got == expected

    def test_input_and_target_rotate_together(self):
        base = self._pairs(2)
        out = patches.augment_rotations(base, np.random.default_rng(2))
        originals = {p.input.tobytes(): p for p in base}
        for pair in out:
            src = originals.get(patches.rotate_block(pair.input, 0).tobytes())
            # find the rotation that maps some original onto this pair
            for orig in base:
                for r in range(4):
                    if np.array_equal(patches.rotate_block(orig.input, r), pair.input):
                        assert np.array_equal(
                            patches.rotate_block(orig.target, r), pair.target
                        )

    def test_consecutive_keeps_orbits_adjacent(self):
        base = self._pairs(4)
        out = patches.augment_rotations(base, np.random.default_rng(3), consecutive=True)
        for i, orig in enumerate(base):
            for r in range(4):
                assert np.array_equal(
                    out[4 * i + r].input, patches.rotate_block(orig.input, r)
                )

    def test_shuffle_is_seeded(self):
        base = self._pairs(5)
        a = patches.augment_rotations(base, np.random.default_rng(4))
        b = patches.augment_rotations(base, np.random.default_rng(4))
        assert all(np.array_equal(x.input, y.input) for x, y in zip(a, b))


class TestElasticDeform:
    @staticmethod
    def _pair(seed=0):
        rng = np.random.default_rng(seed)
        return patches.PatchPair(
            input=rng.normal(size=(2, 88, 88)),
            target=rng.integers(0, 2, size=(32, 32)).astype(float),
            origin=(0, 0),
        )

    def test_vanishing_alpha_is_identity(self):
        pair = self._pair()
        out = patches.elastic_deform(pair, 1e-12, 1.5, np.random.default_rng(0))
        assert np.abs(out.input - pair.input).max() <= 1e-9
        assert np.array_equal(out.target, pair.target)

    def test_labels_stay_binary(self):
        pair = self._pair(1)
        for alpha, sigma in patches.ELASTIC_COMBOS:
            out = patches.elastic_deform(pair, alpha, sigma, np.random.default_rng(2))
            assert set(np.unique(out.target)) <= {0.0, 1.0}
            assert out.target.shape == (32, 32)
            assert out.input.shape == (2, 88, 88)

    def test_deterministic_and_displacing(self):
        pair = self._pair(2)
        a = patches.elastic_deform(pair, 8.0, 1.5, np.random.default_rng(3))
        b = patches.elastic_deform(pair, 8.0, 1.5, np.random.default_rng(3))
        assert np.array_equal(a.input, b.input)
        assert np.abs(a.input - pair.input).max() > 1e-3

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            patches.elastic_deform(self._pair(), 0.0, 1.5, np.random.default_rng(0))


class TestPlanTiles:
    def test_drive_dimensions(self):
        layout = patches.plan_tiles(565, 584)
        assert (layout.padded_width, layout.padded_height) == (576, 608)
        assert len(layout.origins) == 18 * 19 == 342

    def test_single_tile(self):
        layout = patches.plan_tiles(32, 32)
        assert layout.origins == ((0, 0),)

    def test_ceiling_rule(self):
        layout = patches.plan_tiles(33, 32)
        assert layout.padded_width == 64
        assert len(layout.origins) == 2

    def test_disjoint_cover_small_range(self):
        for w in range(1, 201, 13):
            for h in range(1, 201, 17):
                layout = patches.plan_tiles(w, h)
                counter = np.zeros((layout.padded_height, layout.padded_width), dtype=int)
                for r, c in layout.origins:
                    assert r % 32 == 0 and c % 32 == 0
                    counter[r : r + 32, c : c + 32] += 1
                assert (counter == 1).all()

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            patches.plan_tiles(0, 10)


class TestExtractAndAssemble:
    @staticmethod
    def _stack(w=70, h=40, c=3, seed=0):
        rng = np.random.default_rng(seed)
        return InputStack(channels=rng.normal(size=(c, h, w)), mode="base")

    def test_extract_tile_window_contents(self):
        stack = self._stack()
        layout = patches.plan_tiles(70, 40)
        padded = patches.pad_for_tiles(stack.channels, layout)
        tile = patches.extract_tile(padded, layout, 0)
        assert tile.shape == (3, 88, 88)
        # the (0,0) tile's center must be the image's top-left 32x32 corner
        assert np.array_equal(tile[:, 28:60, 28:60], stack.channels[:, :32, :32])
        assert np.array_equal(tile[:, :28, :], np.zeros((3, 28, 88)))

    def test_adjacent_tiles_share_56_columns(self):
        stack = self._stack()
        layout = patches.plan_tiles(70, 40)
        padded = patches.pad_for_tiles(stack.channels, layout)
        a = patches.extract_tile(padded, layout, 0)
        b = patches.extract_tile(padded, layout, 1)
        assert np.array_equal(a[:, :, 32:], b[:, :, :56])

    def test_index_out_of_range(self):
        stack = self._stack()
        layout = patches.plan_tiles(70, 40)
        padded = patches.pad_for_tiles(stack.channels, layout)
        with pytest.raises(IndexError):
            patches.extract_tile(padded, layout, len(layout.origins))

    def test_identity_predictor_reassembles_center_crops(self):
        stack = self._stack(w=65, h=33, c=1)
        layout = patches.plan_tiles(65, 33)
        padded = patches.pad_for_tiles(stack.channels, layout)
        tiles = []
        for i in range(len(layout.origins)):
            window = patches.extract_tile(padded, layout, i)
            tiles.append(window[0, 28:60, 28:60][:, :, None])
        out = patches.assemble(tiles, layout)
        assert out.shape == (33, 65, 1)
        assert np.allclose(out[:, :, 0], stack.channels[0])

    def test_single_tile_layout_crops(self):
        layout = patches.plan_tiles(20, 24)
        tile = np.random.default_rng(1).random((32, 32, 2))
        out = patches.assemble([tile], layout)
        assert np.array_equal(out, tile[:24, :20])

    def test_constant_tiles_give_constant_map(self):
        layout = patches.plan_tiles(64, 64)
        tiles = [np.full((32, 32, 2), 0.25) for _ in layout.origins]
        assert np.allclose(patches.assemble(tiles, layout), 0.25)

    def test_write_count_audit(self):
        layout = patches.plan_tiles(100, 70)
        counter = np.zeros((layout.padded_height, layout.padded_width))
        for r, c in layout.origins:
            counter[r : r + layout.tile, c : c + layout.tile] += 1
        assert (counter == 1).all()

    def test_tile_count_mismatch(self):
        layout = patches.plan_tiles(64, 64)
        with pytest.raises(ValueError, match="tiles"):
            patches.assemble([np.zeros((32, 32, 2))], layout)
