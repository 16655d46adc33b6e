"""Seeded degradation simulators and a smooth low-rank synthetic cube.

A DegradeSpec is fully serializable; applying the same spec to the same clean
cube reproduces the degraded cube bit for bit, because every random choice is
drawn from a fresh generator seeded by the spec and the application order is
fixed: Gaussian noise, then impulse noise, then line deficits, then masking.
"""

from dataclasses import dataclass, field

import numpy as np

from .cube import HsiCube
from .errors import ValidationError
from .rng import Rng


@dataclass
class SamplingMask:
    """Boolean voxel mask, True = observed. Same shape as the cube it samples."""

    keep: np.ndarray

    def __post_init__(self):
        if self.keep.ndim != 3:
            raise ValidationError(f"mask must be 3-d, got shape {self.keep.shape}")
        if self.keep.dtype != np.bool_:
            self.keep = self.keep.astype(bool)

    @property
    def rate(self) -> float:
        return float(self.keep.mean())


@dataclass
class DegradeSpec:
    """Recipe for corrupting a clean cube; see the module docstring for order."""

    gaussian_sigma: float = 0.0
    impulse_density: float = 0.0
    line_deficits: list = field(default_factory=list)
    mask_rate: float | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "gaussian_sigma": self.gaussian_sigma,
            "impulse_density": self.impulse_density,
            "line_deficits": [list(line) for line in self.line_deficits],
            "mask_rate": self.mask_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeSpec":
        known = {"gaussian_sigma", "impulse_density", "line_deficits", "mask_rate", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown degrade keys: {sorted(unknown)}")
        lines = [tuple(line) for line in d.get("line_deficits", [])]
        return cls(
            gaussian_sigma=float(d.get("gaussian_sigma", 0.0)),
            impulse_density=float(d.get("impulse_density", 0.0)),
            line_deficits=lines,
            mask_rate=d.get("mask_rate"),
            seed=int(d.get("seed", 0)),
        )


def add_gaussian(cube: HsiCube, sigma: float, rng: Rng) -> HsiCube:
    """Additive white Gaussian noise; computed in float64, stored as float32."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    noise = rng.normals(cube.data.size).reshape(cube.shape)
    out = cube.data.astype(np.float64) + sigma * noise
    return HsiCube(out.astype(np.float32))


def add_impulse(cube: HsiCube, density: float, rng: Rng) -> HsiCube:
    """Salt-and-pepper noise: each voxel independently replaced with prob `density`.

    Replacement values are 0 and 1 equiprobably. Two uniform draws per voxel
    (selection first, then value), so the pattern is pinned by the stream.
    """
    if not 0.0 <= density <= 1.0:
        raise ValidationError(f"impulse density must lie in [0, 1], got {density}")
    sel = rng.uniforms(cube.data.size).reshape(cube.shape)
    val = rng.uniforms(cube.data.size).reshape(cube.shape)
    spikes = np.where(val < 0.5, np.float32(1.0), np.float32(0.0))
    out = np.where(sel < density, spikes, cube.data.astype(np.float32))
    return HsiCube(out)


def add_line_deficits(cube: HsiCube, lines: list) -> HsiCube:
    """Zero whole rows or columns: lines are (band, 'h'|'v', index) triples."""
    out = cube.data.copy()
    h, w, b = cube.shape
    for line in lines:
        band, orientation, index = line
        if not 0 <= band < b:
            raise ValidationError(f"line deficit band {band} out of range [0, {b})")
        if orientation == "h":
            if not 0 <= index < h:
                raise ValidationError(f"row index {index} out of range [0, {h})")
            out[index, :, band] = 0.0
        elif orientation == "v":
            if not 0 <= index < w:
                raise ValidationError(f"column index {index} out of range [0, {w})")
            out[:, index, band] = 0.0
        else:
            raise ValidationError(f"line orientation must be 'h' or 'v', got {orientation!r}")
    return HsiCube(out)


def random_line_deficits(height: int, width: int, bands: int, rng: Rng,
                         band_fraction: float = 0.1, lines_per_band: int = 2) -> list:
    """Default line-deficit recipe: `lines_per_band` lines in each of
    max(1, round(band_fraction * bands)) distinct bands, random orientation
    and position. Draw order: band choice, then per line one uniform for
    orientation and one integer for the index."""
    if not 0.0 < band_fraction <= 1.0:
        raise ValidationError(f"band fraction must lie in (0, 1], got {band_fraction}")
    if lines_per_band < 1:
        raise ValidationError(f"lines per band must be >= 1, got {lines_per_band}")
    n_bands = min(bands, max(1, round(band_fraction * bands)))
    chosen = [int(i) for i in rng.permutation(bands)[:n_bands]]
    lines = []
    for band in chosen:
        for _ in range(lines_per_band):
            horizontal = rng.uniform() < 0.5
            if horizontal:
                lines.append((band, "h", rng.integer(height)))
            else:
                lines.append((band, "v", rng.integer(width)))
    return lines


def random_mask(shape: tuple, rate: float, rng: Rng) -> SamplingMask:
    """Bernoulli voxel mask with observation probability `rate`."""
    if not 0.0 < rate <= 1.0:
        raise ValidationError(f"mask rate must lie in (0, 1], got {rate}")
    u = rng.uniforms(int(np.prod(shape))).reshape(shape)
    return SamplingMask(u < rate)


def apply_mask(cube: HsiCube, mask: SamplingMask) -> HsiCube:
    if mask.keep.shape != cube.shape:
        raise ValidationError(
            f"mask shape {mask.keep.shape} does not match cube {cube.shape}"
        )
    return HsiCube(np.where(mask.keep, cube.data, np.zeros(1, dtype=cube.data.dtype)))


def mask_to_cube(mask: SamplingMask) -> HsiCube:
    """Mask as a 0/1 cube, for storage in the cube file format."""
    return HsiCube(mask.keep.astype(np.float32))


def mask_from_cube(cube: HsiCube) -> SamplingMask:
    return SamplingMask(cube.data > 0.5)


def apply_spec(cube: HsiCube, spec: DegradeSpec):
    """Apply a full degradation recipe. Returns (degraded, mask or None)."""
    rng = Rng(spec.seed)
    out = cube
    if spec.gaussian_sigma > 0:
        out = add_gaussian(out, spec.gaussian_sigma, rng)
    if spec.impulse_density > 0:
        out = add_impulse(out, spec.impulse_density, rng)
    if spec.line_deficits:
        out = add_line_deficits(out, spec.line_deficits)
    mask = None
    if spec.mask_rate is not None:
        mask = random_mask(cube.shape, spec.mask_rate, rng)
        out = apply_mask(out, mask)
    return out, mask


def _smooth1d(a: np.ndarray, radius: int, axis: int, passes: int = 3) -> np.ndarray:
    """Repeated box blur along one axis with edge-replicated borders."""
    if radius < 1:
        return a
    size = 2 * radius + 1
    moved = np.moveaxis(a, axis, -1)
    for _ in range(passes):
        pad = np.pad(moved, [(0, 0)] * (moved.ndim - 1) + [(radius, radius)], mode="edge")
        c = np.cumsum(pad, axis=-1, dtype=np.float64)
        c = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c], axis=-1)
        moved = (c[..., size:] - c[..., :-size]) / size
    return np.moveaxis(moved, -1, axis)


def synth_lowrank_cube(height: int, width: int, bands: int, rank: int,
                       smoothness: float = 6.0, rng: Rng = None) -> HsiCube:
    """Smooth synthetic cube with spectral (mode-3) rank at most `rank`.

    Built as a sum of rank-1 terms: spatial map x spectral curve, both made
    from blurred white noise. The first spatial map is constant, so the final
    exact rescale to [0, 1] folds into that term and cannot raise the rank.
    """
    if rng is None:
        raise ValidationError("synth_lowrank_cube requires an Rng")
    if min(height, width, bands) < 1:
        raise ValidationError("cube dimensions must be positive")
    if not 1 <= rank <= min(height * width, bands):
        raise ValidationError(
            f"rank must lie in [1, min(h*w, bands)] = [1, {min(height * width, bands)}], got {rank}"
        )
    radius = max(1, int(round(smoothness)))
    spectral_radius = max(1, round(bands / 10))

    def smooth_map():
        m = rng.normals(height * width).reshape(height, width)
        m = _smooth1d(_smooth1d(m, radius, axis=0), radius, axis=1)
        lo, hi = m.min(), m.max()
        return (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)

    def smooth_curve():
        s = rng.normals(bands)
        s = _smooth1d(s, spectral_radius, axis=0, passes=2)
        peak = np.abs(s).max()
        return s / peak if peak > 0 else s

    raw = np.empty((height, width, bands), dtype=np.float64)
    base = smooth_curve()
    raw[:] = 0.75 + 0.25 * base  # constant spatial map times a positive baseline
    for _ in range(rank - 1):
        amap = smooth_map()
        curve = 0.35 * smooth_curve()
        raw += amap[:, :, None] * curve[None, None, :]
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        raw = (raw - lo) / (hi - lo)
    else:
        raw = np.zeros_like(raw)
    return HsiCube(raw.astype(np.float32))
