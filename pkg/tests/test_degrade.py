"""Tests for degradation simulators and the synthetic low-rank cube generator."""

import numpy as np
import pytest

from hsirestore import (
    DegradeSpec,
    HsiCube,
    Rng,
    add_gaussian,
    add_impulse,
    add_line_deficits,
    apply_mask,
    apply_spec,
    mask_from_cube,
    mask_to_cube,
    random_line_deficits,
    random_mask,
    synth_lowrank_cube,
)
from hsirestore.errors import ValidationError


def flat_cube(h=32, w=32, bands=8, value=0.5):
    return HsiCube(np.full((h, w, bands), value, dtype=np.float32))


class TestAddGaussian:
    def test_noise_std_close_to_sigma(self):
        cube = flat_cube(64, 64, 16)
        noisy = add_gaussian(cube, 0.1, Rng(7))
        resid = noisy.data.astype(np.float64) - 0.5
        assert abs(resid.std() - 0.1) < 0.001
        assert abs(resid.mean()) < 0.002

    def test_zero_sigma_is_identity(self):
        cube = flat_cube()
        noisy = add_gaussian(cube, 0.0, Rng(7))
        assert np.array_equal(noisy.data, cube.data)

    def test_deterministic_under_seed(self):
        cube = flat_cube()
        a = add_gaussian(cube, 0.2, Rng(11))
        b = add_gaussian(cube, 0.2, Rng(11))
        assert np.array_equal(a.data, b.data)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValidationError):
            add_gaussian(flat_cube(), -0.1, Rng(0))


class TestAddImpulse:
    def test_fraction_of_corrupted_voxels(self):
        cube = flat_cube(64, 64, 16)
        hit = add_impulse(cube, 0.2, Rng(3))
        changed = np.mean(hit.data != cube.data)
        assert abs(changed - 0.2) < 0.01

    def test_corrupted_values_are_salt_or_pepper(self):
        cube = flat_cube(64, 64, 8)
        hit = add_impulse(cube, 0.3, Rng(5))
        changed = hit.data[hit.data != cube.data]
        assert np.all((changed == 0.0) | (changed == 1.0))
        salt = np.mean(changed == 1.0)
        assert abs(salt - 0.5) < 0.02

    def test_zero_fraction_is_identity(self):
        cube = flat_cube()
        hit = add_impulse(cube, 0.0, Rng(1))
        assert np.array_equal(hit.data, cube.data)

    def test_fraction_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            add_impulse(flat_cube(), 1.5, Rng(0))


class TestLineDeficits:
    def test_requested_lines_are_zeroed_exactly(self):
        cube = flat_cube(16, 16, 4)
        out = add_line_deficits(cube, [(1, "h", 3), (2, "v", 7)])
        assert np.all(out.data[3, :, 1] == 0.0)
        assert np.all(out.data[:, 7, 2] == 0.0)
        # Nothing else was touched.
        touched = np.zeros(cube.shape, dtype=bool)
        touched[3, :, 1] = True
        touched[:, 7, 2] = True
        assert np.array_equal(out.data[~touched], cube.data[~touched])

    def test_bad_band_or_index_rejected(self):
        cube = flat_cube(8, 8, 2)
        with pytest.raises(ValidationError):
            add_line_deficits(cube, [(5, "h", 0)])
        with pytest.raises(ValidationError):
            add_line_deficits(cube, [(0, "h", 8)])
        with pytest.raises(ValidationError):
            add_line_deficits(cube, [(0, "x", 0)])

    def test_random_lines_count_and_ranges(self):
        lines = random_line_deficits(32, 24, 20, Rng(9), band_fraction=0.25,
                                     lines_per_band=3)
        assert len(lines) == 5 * 3
        bands = {b for b, _, _ in lines}
        assert len(bands) == 5
        for band, orient, index in lines:
            assert 0 <= band < 20
            assert orient in ("h", "v")
            limit = 32 if orient == "h" else 24
            assert 0 <= index < limit

    def test_random_lines_deterministic(self):
        a = random_line_deficits(16, 16, 8, Rng(4), 0.5, 2)
        b = random_line_deficits(16, 16, 8, Rng(4), 0.5, 2)
        assert a == b


class TestMasks:
    def test_mask_rate_close_to_requested(self):
        mask = random_mask((64, 64, 16), 0.5, Rng(2))
        assert abs(mask.keep.mean() - 0.5) < 0.01

    def test_apply_mask_zeroes_dropped_voxels(self):
        cube = flat_cube(16, 16, 4)
        mask = random_mask(cube.shape, 0.5, Rng(8))
        masked = apply_mask(cube, mask)
        assert np.all(masked.data[~mask.keep] == 0.0)
        assert np.array_equal(masked.data[mask.keep], cube.data[mask.keep])

    def test_mask_cube_round_trip(self):
        mask = random_mask((8, 8, 3), 0.4, Rng(1))
        back = mask_from_cube(mask_to_cube(mask))
        assert np.array_equal(back.keep, mask.keep)

    def test_mask_shape_mismatch_rejected(self):
        cube = flat_cube(8, 8, 2)
        mask = random_mask((8, 8, 3), 0.5, Rng(0))
        with pytest.raises(ValidationError):
            apply_mask(cube, mask)

    def test_rate_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            random_mask((4, 4, 2), -0.1, Rng(0))


class TestDegradeSpec:
    def test_dict_round_trip(self):
        spec = DegradeSpec(gaussian_sigma=0.1, impulse_density=0.05,
                           line_deficits=[(1, "h", 3), (0, "v", 2)],
                           mask_rate=0.3, seed=42)
        back = DegradeSpec.from_dict(spec.to_dict())
        assert back == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            DegradeSpec.from_dict({"seed": 1, "bogus": 2})

    def test_apply_spec_replay_is_bit_identical(self):
        cube = synth_lowrank_cube(24, 24, 6, 3, rng=Rng(77))
        spec = DegradeSpec(gaussian_sigma=0.08, impulse_density=0.1,
                           line_deficits=[(2, "h", 5)], mask_rate=0.2, seed=5)
        out1, mask1 = apply_spec(cube, spec)
        out2, mask2 = apply_spec(cube, spec)
        assert np.array_equal(out1.data, out2.data)
        assert np.array_equal(mask1.keep, mask2.keep)

    def test_apply_spec_stage_order_gaussian_then_impulse(self):
        # Impulse values must survive untouched, which means the gaussian
        # stage ran before impulse corruption, not after.
        cube = flat_cube(32, 32, 4)
        spec = DegradeSpec(gaussian_sigma=0.05, impulse_density=0.2, seed=3)
        out, mask = apply_spec(cube, spec)
        assert mask is None
        exact = (out.data == 0.0) | (out.data == 1.0)
        assert abs(exact.mean() - 0.2) < 0.02

    def test_apply_spec_mask_only(self):
        cube = flat_cube(16, 16, 4)
        spec = DegradeSpec(seed=9, mask_rate=0.5)
        out, mask = apply_spec(cube, spec)
        assert mask is not None
        assert np.all(out.data[~mask.keep] == 0.0)
        assert np.array_equal(out.data[mask.keep], cube.data[mask.keep])


class TestSynthLowrank:
    def test_output_range_and_dtype(self):
        cube = synth_lowrank_cube(32, 32, 12, 4, rng=Rng(0))
        assert cube.data.dtype == np.float32
        assert cube.data.min() == 0.0
        assert cube.data.max() == 1.0

    def test_mode3_rank_is_bounded_by_request(self):
        cube = synth_lowrank_cube(48, 48, 16, 4, rng=Rng(6))
        flat = cube.data.reshape(-1, 16).astype(np.float64)
        s = np.linalg.svd(flat, compute_uv=False)
        assert s[4] < 1e-5 * s[0]

    def test_deterministic_under_seed(self):
        a = synth_lowrank_cube(16, 16, 8, 3, rng=Rng(21))
        b = synth_lowrank_cube(16, 16, 8, 3, rng=Rng(21))
        assert np.array_equal(a.data, b.data)

    def test_distinct_seeds_differ(self):
        a = synth_lowrank_cube(16, 16, 8, 3, rng=Rng(21))
        b = synth_lowrank_cube(16, 16, 8, 3, rng=Rng(22))
        assert not np.array_equal(a.data, b.data)

    def test_smoothness_reduces_spatial_gradients(self):
        rough = synth_lowrank_cube(48, 48, 8, 4, smoothness=1.0, rng=Rng(3))
        smooth = synth_lowrank_cube(48, 48, 8, 4, smoothness=6.0, rng=Rng(3))
        gr = np.abs(np.diff(rough.data, axis=0)).mean()
        gs = np.abs(np.diff(smooth.data, axis=0)).mean()
        assert gs < gr

    def test_invalid_rank_rejected(self):
        with pytest.raises(ValidationError):
            synth_lowrank_cube(16, 16, 4, 0, rng=Rng(0))
        with pytest.raises(ValidationError):
            synth_lowrank_cube(16, 16, 4, 5, rng=Rng(0))
