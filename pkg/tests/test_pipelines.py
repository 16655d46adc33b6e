"""Tests for the training pipelines: noisier-target construction, whole-cube
inference, the three task loops, and the joint mixed-noise loss."""

import numpy as np
import pytest

from hsirestore import (
    Adam,
    GaussianTaskConfig,
    HolefillTaskConfig,
    HsiCube,
    LrSchedule,
    MixedTaskConfig,
    Rng,
    add_gaussian,
    apply_mask,
    build_model,
    denoise,
    identity_model,
    make_noisier_target,
    masked_psnr,
    mixed_loss,
    model_forward,
    psnr,
    random_mask,
    synth_lowrank_cube,
    train_gaussian,
    train_holefill,
    train_mixed,
)
from hsirestore.errors import ValidationError

from helpers import central_diff, grad_matches, random_f64


def small_cube(seed=0, h=24, w=24, bands=6):
    return synth_lowrank_cube(h, w, bands, 3, smoothness=4.0, rng=Rng(seed))


class TestMakeNoisierTarget:
    def test_added_noise_std_tracks_sigma(self):
        y = HsiCube(np.full((64, 64, 16), 0.5, dtype=np.float32))
        noisier, target, alpha = make_noisier_target(y, 0.1, (0.0, 0.0), Rng(3))
        assert alpha == 0.0
        assert target is y
        resid = noisier.data.astype(np.float64) - 0.5
        assert abs(resid.std() - 0.1) / 0.1 < 0.02

    def test_alpha_scales_the_noise(self):
        y = HsiCube(np.full((64, 64, 16), 0.5, dtype=np.float32))
        noisier, _, alpha = make_noisier_target(y, 0.1, (0.5, 0.5), Rng(3))
        assert alpha == 0.5
        resid = noisier.data.astype(np.float64) - 0.5
        assert abs(resid.std() - 0.15) / 0.15 < 0.02

    def test_alpha_is_reported_within_range(self):
        y = HsiCube(np.full((8, 8, 2), 0.5, dtype=np.float32))
        seen = set()
        for seed in range(20):
            _, _, alpha = make_noisier_target(y, 0.1, (-0.1, 0.1), Rng(seed))
            assert -0.1 <= alpha <= 0.1
            seen.add(round(alpha, 6))
        assert len(seen) > 10

    def test_nonpositive_sigma_rejected(self):
        y = HsiCube(np.zeros((4, 4, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            make_noisier_target(y, 0.0, (-0.1, 0.1), Rng(0))


class TestDenoiseInference:
    def test_identity_model_returns_clipped_input(self):
        rng = Rng(5)
        data = (rng.normals(20 * 18 * 3).reshape(20, 18, 3) * 0.6 + 0.5)
        cube = HsiCube(data.astype(np.float32))
        model = identity_model(3)
        out = denoise(model, cube, patch=8)
        assert np.array_equal(out.data, np.clip(cube.data, 0.0, 1.0))
        assert out.data.dtype == np.float32

    def test_band_count_checked(self):
        model = identity_model(4)
        with pytest.raises(ValidationError):
            denoise(model, HsiCube(np.zeros((8, 8, 3), dtype=np.float32)))

    def test_patch_larger_than_cube_is_clamped(self):
        cube = HsiCube(np.full((6, 6, 2), 0.25, dtype=np.float32))
        out = denoise(identity_model(2), cube, patch=50)
        assert np.array_equal(out.data, cube.data)


class TestTrainGaussian:
    def test_zero_epochs_returns_inference_only(self):
        clean = small_cube()
        noisy = add_gaussian(clean, 0.1, Rng(1))
        model = identity_model(clean.bands)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = GaussianTaskConfig(epochs=0, patch=12)
        res = train_gaussian(noisy, cfg, model, opt, Rng(2))
        assert res.losses == []
        assert np.array_equal(res.restored.data, np.clip(noisy.data, 0.0, 1.0))

    def test_short_run_reduces_loss_and_improves_psnr(self):
        clean = small_cube(seed=7, h=32, w=32, bands=8)
        noisy = add_gaussian(clean, 0.1, Rng(11))
        rng = Rng(0)
        model = build_model(8, hidden=24, blocks=3, rng=rng)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = GaussianTaskConfig(epochs=30, batch=16, patch=16,
                                 refresh_every=None,
                                 schedule=LrSchedule(initial=0.01, halve_every=10))
        res = train_gaussian(noisy, cfg, model, opt, rng)
        head = np.mean(res.losses[:5])
        tail = np.mean(res.losses[-5:])
        assert tail < 0.5 * head
        assert psnr(clean, res.restored).mean > psnr(clean, noisy).mean + 1.0
        assert len(res.losses) == 30
        assert len(res.lrs) == 30
        assert res.lrs[0] == 0.01 and res.lrs[-1] == 0.0025

    def test_refresh_boundary_does_not_explode_loss(self):
        clean = small_cube(seed=3, h=32, w=32, bands=8)
        noisy = add_gaussian(clean, 0.1, Rng(4))
        rng = Rng(1)
        model = build_model(8, hidden=24, blocks=3, rng=rng)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = GaussianTaskConfig(epochs=24, batch=16, patch=16, refresh_every=12,
                                 schedule=LrSchedule(initial=0.01, halve_every=8))
        res = train_gaussian(noisy, cfg, model, opt, rng)
        # The working target is swapped at epoch 12; sigma is re-estimated
        # (smaller after partial cleaning) and the loss must not blow up.
        assert len(res.sigma_estimates) == 24
        assert res.sigma_estimates[12] < res.sigma_estimates[0]
        assert res.losses[12] < 2.0 * res.losses[11]

    def test_progress_callback_sees_every_epoch(self):
        clean = small_cube(h=20, w=20, bands=4)
        noisy = add_gaussian(clean, 0.1, Rng(9))
        rng = Rng(2)
        model = build_model(4, hidden=8, blocks=2, rng=rng)
        opt = Adam(model.parameters(), model.parameter_names())
        seen = []
        cfg = GaussianTaskConfig(epochs=3, batch=8, patch=12, refresh_every=None)
        train_gaussian(noisy, cfg, model, opt, rng,
                       progress=lambda e, loss, lr, sig: seen.append((e, loss, lr, sig)))
        assert [e for e, _, _, _ in seen] == [0, 1, 2]

    def test_band_mismatch_rejected(self):
        noisy = add_gaussian(small_cube(bands=6), 0.1, Rng(1))
        model = identity_model(5)
        opt = Adam(model.parameters(), model.parameter_names())
        with pytest.raises(ValidationError):
            train_gaussian(noisy, GaussianTaskConfig(epochs=1), model, opt, Rng(0))


class TestMixedLoss:
    def test_gradients_match_finite_differences(self):
        rng = Rng(8)
        bands = 3
        primary = build_model(bands, hidden=6, blocks=2, rng=rng, dtype=np.float64)
        companion = build_model(bands, hidden=6, blocks=2, rng=rng, dtype=np.float64)
        batch = random_f64(rng, (2, 6, 6, bands)) * 0.2 + 0.5
        noise = random_f64(rng, (2, 6, 6, bands)) * 0.05
        lam = 0.7

        loss0, g1, g2 = mixed_loss(primary, companion, batch, noise, lam)
        assert np.isfinite(loss0)

        def loss_fn():
            value, _, _ = mixed_loss(primary, companion, batch, noise, lam)
            return value

        for params, grads, tag in ((primary.parameters(), g1, "primary"),
                                   (companion.parameters(), g2, "companion")):
            for p, g in zip(params, grads):
                fd = central_diff(loss_fn, p)
                assert grad_matches(fd, g, rtol=1e-3), (tag, p.shape)

    def test_lambda_zero_drops_companion_fit_term(self):
        rng = Rng(3)
        bands = 2
        primary = build_model(bands, hidden=4, blocks=2, rng=rng, dtype=np.float64)
        companion = identity_model(bands, dtype=np.float64)
        batch = random_f64(rng, (1, 5, 5, bands)) * 0.2 + 0.5
        noise = random_f64(rng, (1, 5, 5, bands)) * 0.05
        loss, g1, g2 = mixed_loss(primary, companion, batch, noise, 0.0)
        # With lam = 0 the loss is exactly the denoiser consistency term.
        z = model_forward(companion, batch)[0]
        pred = model_forward(primary, z + noise)[0]
        want = np.mean((pred - z) ** 2)
        assert np.isclose(loss, want, rtol=1e-12)

    def test_l1_term_value(self):
        rng = Rng(4)
        bands = 2
        primary = identity_model(bands, dtype=np.float64)
        companion = identity_model(bands, dtype=np.float64)
        batch = random_f64(rng, (2, 4, 4, bands)) * 0.3 + 0.5
        noise = np.zeros_like(batch)
        # Identity nets with zero noise: consistency term vanishes and the
        # l1 term vanishes too (companion output equals the batch).
        loss, _, _ = mixed_loss(primary, companion, batch, noise, 5.0)
        assert loss < 1e-12


class TestTrainMixed:
    def test_short_run_improves_on_degraded_input(self):
        clean = small_cube(seed=5, h=32, w=32, bands=8)
        noisy = add_gaussian(clean, 0.1, Rng(21))
        rng = Rng(0)
        primary = build_model(8, hidden=24, blocks=3, rng=rng)
        companion = build_model(8, hidden=24, blocks=3, rng=rng)
        opt1 = Adam(primary.parameters(), primary.parameter_names())
        opt2 = Adam(companion.parameters(), companion.parameter_names())
        cfg = MixedTaskConfig(epochs=40, batch=16, patch=16, lambda_l1=1.0,
                              train_sigma_range=(0.05, 0.15),
                              schedule=LrSchedule(initial=0.01, halve_every=15))
        res = train_mixed(noisy, cfg, primary, companion, opt1, opt2, rng)
        assert psnr(clean, res.restored).mean > psnr(clean, noisy).mean
        assert len(res.losses) == 40
        assert res.restored.data.dtype == np.float32

    def test_zero_epochs_leaves_networks_unchanged(self):
        clean = small_cube(h=16, w=16, bands=4)
        noisy = add_gaussian(clean, 0.1, Rng(6))
        rng = Rng(0)
        primary = build_model(4, hidden=8, blocks=2, rng=rng)
        companion = build_model(4, hidden=8, blocks=2, rng=rng)
        snap1 = [p.copy() for p in primary.parameters()]
        snap2 = [p.copy() for p in companion.parameters()]
        opt1 = Adam(primary.parameters(), primary.parameter_names())
        opt2 = Adam(companion.parameters(), companion.parameter_names())
        cfg = MixedTaskConfig(epochs=0, batch=8, patch=12)
        res = train_mixed(noisy, cfg, primary, companion, opt1, opt2, rng)
        for p, q in zip(primary.parameters(), snap1):
            assert np.array_equal(p, q)
        for p, q in zip(companion.parameters(), snap2):
            assert np.array_equal(p, q)
        assert res.losses == []

    def test_huge_lambda_pins_companion_to_observation(self):
        # Monotonicity probe: with a dominant l1 weight the companion is
        # pushed toward reproducing the degraded input exactly, so its
        # median absolute residual drops below the lambda=1 run's.
        clean = small_cube(seed=19, h=24, w=24, bands=6)
        noisy = add_gaussian(clean, 0.1, Rng(23))

        def run(lam):
            rng = Rng(2)
            primary = build_model(6, hidden=12, blocks=2, rng=rng)
            companion = build_model(6, hidden=12, blocks=2, rng=rng)
            opt1 = Adam(primary.parameters(), primary.parameter_names())
            opt2 = Adam(companion.parameters(), companion.parameter_names())
            cfg = MixedTaskConfig(epochs=25, batch=8, patch=12, lambda_l1=lam,
                                  schedule=LrSchedule(initial=0.01, halve_every=10))
            train_mixed(noisy, cfg, primary, companion, opt1, opt2, rng)
            fit = denoise(companion, noisy, patch=12)
            return np.median(np.abs(fit.data.astype(np.float64) -
                                    np.clip(noisy.data, 0.0, 1.0)))

        assert run(1e6) < run(1.0)

    def test_frozen_companion_never_changes(self):
        clean = small_cube(h=20, w=20, bands=4)
        noisy = add_gaussian(clean, 0.1, Rng(2))
        rng = Rng(1)
        primary = build_model(4, hidden=8, blocks=2, rng=rng)
        companion = identity_model(4)
        before = [p.copy() for p in companion.parameters()]
        opt1 = Adam(primary.parameters(), primary.parameter_names())
        cfg = MixedTaskConfig(epochs=3, batch=8, patch=12)
        train_mixed(noisy, cfg, primary, companion, opt1, None, rng)
        for p, q in zip(companion.parameters(), before):
            assert np.array_equal(p, q)


class TestTrainHolefill:
    def test_full_mask_identity_model_has_zero_loss(self):
        # Mask rate 1.0 turns hole-filling into plain self-reconstruction,
        # and an identity-configured model reconstructs exactly.
        cube = small_cube(h=16, w=16, bands=4)
        mask = random_mask(cube.shape, 1.0, Rng(1))
        assert mask.keep.all()
        model = identity_model(4)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = HolefillTaskConfig(epochs=1, batch=4, patch=12)
        res = train_holefill(cube, mask, cfg, model, opt, Rng(0))
        assert res.losses[0] < 1e-12

    def test_mask_contract_validated(self):
        cube = small_cube(h=16, w=16, bands=4)
        mask = random_mask(cube.shape, 0.5, Rng(1))
        model = identity_model(4)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = HolefillTaskConfig(epochs=1, batch=8, patch=12)
        # Unmasked voxels present outside the mask: reject.
        with pytest.raises(ValidationError):
            train_holefill(cube, mask, cfg, model, opt, Rng(0))
        # Mask shape mismatch: reject.
        other = random_mask((16, 16, 5), 0.5, Rng(2))
        with pytest.raises(ValidationError):
            train_holefill(apply_mask(cube, mask), other, cfg, model, opt, Rng(0))

    def test_loss_only_reads_observed_voxels(self):
        # Training twice on inputs that differ only at masked-out voxels of
        # the *target* side must produce identical losses: the loss ignores
        # hole positions entirely. (The inputs are identical because holes
        # are zeroed; this checks the masked objective plumbing end to end.)
        cube = small_cube(seed=9, h=20, w=20, bands=4)
        mask = random_mask(cube.shape, 0.5, Rng(3))
        observed = apply_mask(cube, mask)

        def run():
            rng = Rng(7)
            model = build_model(4, hidden=8, blocks=2, rng=rng)
            opt = Adam(model.parameters(), model.parameter_names())
            cfg = HolefillTaskConfig(epochs=2, batch=8, patch=12)
            return train_holefill(observed, mask, cfg, model, opt, rng)

        a, b = run(), run()
        assert a.losses == b.losses
        assert np.array_equal(a.restored.data, b.restored.data)

    def test_short_run_beats_leaving_holes(self):
        clean = small_cube(seed=13, h=32, w=32, bands=8)
        mask = random_mask(clean.shape, 0.5, Rng(5))
        observed = apply_mask(clean, mask)
        rng = Rng(0)
        model = build_model(8, hidden=24, blocks=3, rng=rng)
        opt = Adam(model.parameters(), model.parameter_names())
        cfg = HolefillTaskConfig(epochs=40, batch=16, patch=16,
                                 schedule=LrSchedule(initial=0.01, halve_every=15))
        res = train_holefill(observed, mask, cfg, model, opt, rng)
        held = ~mask.keep
        filled = masked_psnr(clean, res.restored, held).mean
        holes = masked_psnr(clean, observed, held).mean
        assert filled > holes + 3.0


class TestReductionEquivalence:
    def test_mixed_with_identity_companion_matches_gaussian_loop(self):
        # With lambda = 0, a frozen identity companion, alpha pinned to 0,
        # and the mixed sigma range pinned to the gaussian loop's estimated
        # sigma-prime, both loops consume identical random streams and take
        # identical Adam steps, so the trained weights agree bit for bit.
        clean = small_cube(seed=17, h=24, w=24, bands=6)
        noisy = add_gaussian(clean, 0.1, Rng(31))

        rng_a = Rng(5)
        model_a = build_model(6, hidden=12, blocks=2, rng=rng_a)
        opt_a = Adam(model_a.parameters(), model_a.parameter_names())
        cfg_a = GaussianTaskConfig(epochs=4, batch=8, patch=12,
                                   refresh_every=None, alpha_range=(0.0, 0.0))
        res_a = train_gaussian(noisy, cfg_a, model_a, opt_a, rng_a)

        sigma_prime = res_a.sigma_estimates[0]
        rng_b = Rng(5)
        model_b = build_model(6, hidden=12, blocks=2, rng=rng_b)
        companion = identity_model(6)
        opt_b = Adam(model_b.parameters(), model_b.parameter_names())
        cfg_b = MixedTaskConfig(epochs=4, batch=8, patch=12, lambda_l1=0.0,
                                train_sigma_range=(sigma_prime, sigma_prime))
        res_b = train_mixed(noisy, cfg_b, model_b, companion, opt_b, None, rng_b)

        for p, q in zip(model_a.parameters(), model_b.parameters()):
            assert np.array_equal(p, q)
        assert np.array_equal(res_a.restored.data, res_b.restored.data)
