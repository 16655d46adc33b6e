"""Self-supervised training pipelines and whole-cube inference.

Three tasks share one machinery:

* Gaussian denoising: the network is trained to map a re-noised copy of the
  observation back to the observation. The injected level tracks a blind
  estimate sigma' of the observation's own noise, jittered per batch by a
  factor (1 + alpha) with alpha uniform on a small interval. Optionally the
  observation is refreshed every `refresh_every` epochs: it is replaced by
  the current network's clamped output and sigma' is re-estimated.
* Mixed-noise removal: two networks are trained jointly. The companion
  network's output is the pseudo-clean target; the primary network learns to
  map a re-noised copy of that target back to it, while an L1 penalty ties
  the target to the observation (robust to impulse and line corruption).
  The restored cube is the clamped primary-network output on the observation.
* Hole filling: the loss is evaluated only on observed voxels; the network
  inpaints the rest by spatial and spectral context.

Training draws (patch shuffles, per-batch noise) all come from one caller
supplied Rng, so a seed fixes the run exactly. Whole-cube inference tiles the
cube with half-overlapping patches (last row/column anchored to the border)
and averages overlapping predictions with uniform weights before clamping to
[0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

from .cube import HsiCube, Patch, _starts, apply_augment, dihedral_ops
from .errors import ValidationError
from .noise_est import estimate_sigma
from .nn import SeparableCnn, model_backward, model_forward
from .optim import Adam, LrSchedule
from .rng import Rng

_SIGMA_FLOOR = 1e-6


@dataclass
class GaussianTaskConfig:
    epochs: int = 600
    batch: int = 32
    patch: int = 20
    refresh_every: int | None = 300
    alpha_range: tuple = (-0.1, 0.1)
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def __post_init__(self):
        _check_common(self.epochs, self.batch, self.patch)
        if self.refresh_every is not None and self.refresh_every < 1:
            raise ValidationError(f"refresh_every must be >= 1 or None, got {self.refresh_every}")
        lo, hi = self.alpha_range
        if lo > hi or 1.0 + lo <= 0.0:
            raise ValidationError(f"alpha range must satisfy -1 < lo <= hi, got {self.alpha_range}")


@dataclass
class MixedTaskConfig:
    epochs: int = 1000
    batch: int = 32
    patch: int = 20
    lambda_l1: float = 1.0
    train_sigma_range: tuple = (0.05, 0.25)
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def __post_init__(self):
        _check_common(self.epochs, self.batch, self.patch)
        if self.lambda_l1 < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lambda_l1}")
        lo, hi = self.train_sigma_range
        if lo > hi or lo < 0:
            raise ValidationError(f"sigma range must satisfy 0 <= lo <= hi, got {self.train_sigma_range}")


@dataclass
class HolefillTaskConfig:
    epochs: int = 800
    batch: int = 32
    patch: int = 20
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def __post_init__(self):
        _check_common(self.epochs, self.batch, self.patch)


def _check_common(epochs, batch, patch):
    if epochs < 0:
        raise ValidationError(f"epochs must be >= 0, got {epochs}")
    if batch < 1 or patch < 1:
        raise ValidationError(f"batch and patch must be >= 1, got {batch}, {patch}")


@dataclass
class TrainResult:
    model: SeparableCnn
    restored: HsiCube
    losses: list
    lrs: list
    sigma_estimates: list


@dataclass
class MixedResult:
    primary: SeparableCnn
    companion: SeparableCnn
    restored: HsiCube
    losses: list
    lrs: list


def make_noisier_target(y: HsiCube, sigma_prime: float, alpha_range: tuple, rng: Rng):
    """Re-noise an observation: returns (noisier, target, alpha).

    noisier = y + n with n ~ N(0, ((1 + alpha) sigma')^2) and alpha drawn
    uniformly from alpha_range; the target is y itself. Noise is generated in
    float64 and the sum stored as float32.
    """
    if sigma_prime <= 0:
        raise ValidationError(f"sigma_prime must be positive, got {sigma_prime}")
    lo, hi = alpha_range
    if lo > hi or 1.0 + lo <= 0.0:
        raise ValidationError(f"alpha range must satisfy -1 < lo <= hi, got {alpha_range}")
    alpha = rng.uniform(lo, hi)
    sigma = (1.0 + alpha) * sigma_prime
    noise = rng.normals(y.data.size).reshape(y.shape)
    noisier = (y.data.astype(np.float64) + sigma * noise).astype(np.float32)
    return HsiCube(noisier), y, alpha


def _augment_tile(tile: np.ndarray, op) -> np.ndarray:
    return apply_augment(Patch(origin=(0, 0), data=tile), op).data


def _augmented_pool(data: np.ndarray, patch: int) -> np.ndarray:
    """Square patches (half-overlap grid, border-anchored) under all 8 symmetries."""
    h, w = data.shape[0], data.shape[1]
    p = min(patch, h, w)
    stride = max(1, p // 2)
    tiles = [data[r:r + p, c:c + p, :]
             for r in _starts(h, p, stride) for c in _starts(w, p, stride)]
    ops = dihedral_ops()
    pool = np.empty((len(tiles) * len(ops), p, p, data.shape[2]), dtype=data.dtype)
    i = 0
    for tile in tiles:
        for op in ops:
            pool[i] = _augment_tile(tile, op)
            i += 1
    return pool


def _batch_indices(n: int, batch: int, rng: Rng):
    perm = rng.permutation(n)
    for i in range(0, n, batch):
        yield perm[i:i + batch]


def denoise(model: SeparableCnn, cube: HsiCube, patch: int = 20, batch: int = 32) -> HsiCube:
    """Whole-cube inference: clamp(model(cube)) with half-overlap patch blending."""
    if cube.bands != model.input_bands:
        raise ValidationError(
            f"model expects {model.input_bands} bands, cube has {cube.bands}"
        )
    h, w = cube.height, cube.width
    p = min(patch, h, w)
    stride = max(1, p // 2)
    positions = [(r, c) for r in _starts(h, p, stride) for c in _starts(w, p, stride)]
    acc = np.zeros(cube.shape, dtype=np.float64)
    hits = np.zeros((h, w), dtype=np.float64)
    data = cube.data
    for i in range(0, len(positions), batch):
        chunk = positions[i:i + batch]
        xb = np.stack([data[r:r + p, c:c + p, :] for r, c in chunk])
        yb, _ = model_forward(model, xb, "infer")
        for (r, c), out in zip(chunk, yb):
            acc[r:r + p, c:c + p, :] += out
            hits[r:r + p, c:c + p] += 1.0
    blended = acc / hits[:, :, None]
    return HsiCube(np.clip(blended, 0.0, 1.0).astype(np.float32))


def train_gaussian(y: HsiCube, cfg: GaussianTaskConfig, model: SeparableCnn, opt: Adam,
                   rng: Rng, progress=None) -> TrainResult:
    """Self-supervised Gaussian denoising; see the module docstring.

    Per batch: one uniform draw for alpha, then one normal per voxel. The
    epoch loss is the unweighted mean of its batch losses. `progress`, if
    given, is called as progress(epoch, loss, lr, sigma_estimate).
    """
    if y.bands != model.input_bands:
        raise ValidationError(f"model expects {model.input_bands} bands, cube has {y.bands}")
    y_work = y
    sigma_est = estimate_sigma(y_work).sigma
    pool = _augmented_pool(y_work.data, cfg.patch)
    losses, lrs, sigmas = [], [], []
    lo, hi = cfg.alpha_range
    for epoch in range(cfg.epochs):
        if cfg.refresh_every is not None and epoch > 0 and epoch % cfg.refresh_every == 0:
            y_work = denoise(model, y_work, patch=cfg.patch, batch=cfg.batch)
            sigma_est = estimate_sigma(y_work).sigma
            pool = _augmented_pool(y_work.data, cfg.patch)
        lr = cfg.schedule.lr_at(epoch)
        sigma_train = max(sigma_est, _SIGMA_FLOOR)
        batch_losses = []
        for idx in _batch_indices(len(pool), cfg.batch, rng):
            target = pool[idx]
            alpha = rng.uniform(lo, hi)
            sigma = (1.0 + alpha) * sigma_train
            noise = sigma * rng.normals(target.size).reshape(target.shape)
            noisy = target + noise.astype(target.dtype)
            out, tape = model_forward(model, noisy, "train")
            resid = out - target
            batch_losses.append(float(np.mean(resid.astype(np.float64) ** 2)))
            grads, _ = model_backward(model, tape, (2.0 / resid.size) * resid)
            opt.step(grads, lr)
        epoch_loss = float(np.mean(batch_losses))
        losses.append(epoch_loss)
        lrs.append(lr)
        sigmas.append(sigma_est)
        if progress is not None:
            progress(epoch, epoch_loss, lr, sigma_est)
    restored = denoise(model, y, patch=cfg.patch, batch=cfg.batch)
    return TrainResult(model=model, restored=restored, losses=losses, lrs=lrs,
                       sigma_estimates=sigmas)


def mixed_loss(primary: SeparableCnn, companion: SeparableCnn, batch: np.ndarray,
               noise: np.ndarray, lam: float):
    """Joint loss for mixed-noise training; returns (loss, primary_grads, companion_grads).

    loss = mean((primary(companion(y) + noise) - companion(y))^2)
         + lam * mean(|y - companion(y)|)

    Both terms are per-voxel means. The L1 subgradient at exact zeros is 0.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    if noise.shape != batch.shape:
        raise ValidationError(f"noise shape {noise.shape} does not match batch {batch.shape}")
    z2, tape2 = model_forward(companion, batch, "train")
    noisier = z2 + noise.astype(z2.dtype)
    z1, tape1 = model_forward(primary, noisier, "train")
    resid = z1 - z2
    l1_resid = batch.astype(z2.dtype) - z2
    loss = float(np.mean(resid.astype(np.float64) ** 2)
                 + lam * np.mean(np.abs(l1_resid.astype(np.float64))))
    g1 = (2.0 / resid.size) * resid
    primary_grads, gin1 = model_backward(primary, tape1, g1)
    g2 = gin1 - g1 - (lam / l1_resid.size) * np.sign(l1_resid)
    companion_grads, _ = model_backward(companion, tape2, g2)
    return loss, primary_grads, companion_grads


def train_mixed(y: HsiCube, cfg: MixedTaskConfig, primary: SeparableCnn,
                companion: SeparableCnn, opt_primary: Adam, opt_companion: Adam | None,
                rng: Rng, progress=None) -> MixedResult:
    """Joint two-network training for mixed Gaussian/impulse/line corruption.

    Per batch: one uniform draw for the injected noise level (from
    cfg.train_sigma_range), then one normal per voxel. Passing
    opt_companion=None freezes the companion network. The restored cube is
    the clamped primary-network output on the observation.
    """
    if y.bands != primary.input_bands or y.bands != companion.input_bands:
        raise ValidationError("both networks must match the cube's band count")
    pool = _augmented_pool(y.data, cfg.patch)
    losses, lrs = [], []
    lo, hi = cfg.train_sigma_range
    for epoch in range(cfg.epochs):
        lr = cfg.schedule.lr_at(epoch)
        batch_losses = []
        for idx in _batch_indices(len(pool), cfg.batch, rng):
            batch = pool[idx]
            sigma = rng.uniform(lo, hi)
            noise = sigma * rng.normals(batch.size).reshape(batch.shape)
            loss, primary_grads, companion_grads = mixed_loss(
                primary, companion, batch, noise, cfg.lambda_l1)
            opt_primary.step(primary_grads, lr)
            if opt_companion is not None:
                opt_companion.step(companion_grads, lr)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        losses.append(epoch_loss)
        lrs.append(lr)
        if progress is not None:
            progress(epoch, epoch_loss, lr, None)
    restored = denoise(primary, y, patch=cfg.patch, batch=cfg.batch)
    return MixedResult(primary=primary, companion=companion, restored=restored,
                       losses=losses, lrs=lrs)


def train_holefill(y_masked: HsiCube, mask, cfg: HolefillTaskConfig, model: SeparableCnn,
                   opt: Adam, rng: Rng, progress=None) -> TrainResult:
    """Self-supervised hole filling.

    `y_masked` must be zero at unobserved voxels (as produced by apply_mask).
    The loss is the mean squared error between model output and observation
    over observed voxels only; unobserved voxels are free. The restored cube
    is the clamped model output on the masked observation, on the full grid.
    """
    if mask.keep.shape != y_masked.shape:
        raise ValidationError(
            f"mask shape {mask.keep.shape} does not match cube {y_masked.shape}"
        )
    if not np.all(y_masked.data[~mask.keep] == 0):
        raise ValidationError("y_masked must be zero at unobserved voxels")
    if y_masked.bands != model.input_bands:
        raise ValidationError(f"model expects {model.input_bands} bands, cube has {y_masked.bands}")
    pool = _augmented_pool(y_masked.data, cfg.patch)
    ops = dihedral_ops()
    h, w = y_masked.height, y_masked.width
    p = min(cfg.patch, h, w)
    stride = max(1, p // 2)
    keep = mask.keep
    mask_tiles = [keep[r:r + p, c:c + p, :]
                  for r in _starts(h, p, stride) for c in _starts(w, p, stride)]
    mask_pool = np.empty((len(mask_tiles) * len(ops), p, p, y_masked.bands), dtype=bool)
    i = 0
    for tile in mask_tiles:
        for op in ops:
            mask_pool[i] = _augment_tile(tile, op)
            i += 1
    losses, lrs = [], []
    for epoch in range(cfg.epochs):
        lr = cfg.schedule.lr_at(epoch)
        batch_losses = []
        for idx in _batch_indices(len(pool), cfg.batch, rng):
            batch = pool[idx]
            observed = mask_pool[idx]
            count = int(observed.sum())
            if count == 0:
                continue
            out, tape = model_forward(model, batch, "train")
            resid = (out - batch) * observed
            batch_losses.append(float(np.sum(resid.astype(np.float64) ** 2) / count))
            grads, _ = model_backward(model, tape, (2.0 / count) * resid)
            opt.step(grads, lr)
        epoch_loss = float(np.mean(batch_losses)) if batch_losses else 0.0
        losses.append(epoch_loss)
        lrs.append(lr)
        if progress is not None:
            progress(epoch, epoch_loss, lr, None)
    restored = denoise(model, y_masked, patch=cfg.patch, batch=cfg.batch)
    return TrainResult(model=model, restored=restored, losses=losses, lrs=lrs,
                       sigma_estimates=[])
