"""Quality metrics and low-rank diagnostics."""

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube
from .errors import ShapeError, ValidationError

_PSNR_CAP = 99.0

DIRECTIONS = ("x", "y", "z", "diag_yz", "antidiag_yz")


@dataclass
class BandPsnrReport:
    per_band: np.ndarray
    mean: float


@dataclass
class SingularSpectrum:
    mode: int
    values: np.ndarray  # descending


@dataclass
class DiffHistogram:
    direction: str
    bin_edges: np.ndarray  # length bins + 1, spanning [-1, 1]
    counts: np.ndarray
    zero_bin: int

    @property
    def zero_bin_mass(self) -> float:
        return float(self.counts[self.zero_bin] / max(1, self.counts.sum()))


def psnr(reference: HsiCube, estimate: HsiCube, peak: float = 1.0) -> BandPsnrReport:
    """Per-band peak signal-to-noise ratio in dB, capped at 99 (exact match)."""
    if reference.shape != estimate.shape:
        raise ShapeError(
            f"psnr shapes differ: {reference.shape} vs {estimate.shape}"
        )
    if peak <= 0:
        raise ValidationError(f"peak must be positive, got {peak}")
    diff = reference.data.astype(np.float64) - estimate.data.astype(np.float64)
    mse = np.mean(diff * diff, axis=(0, 1))
    per_band = np.full(reference.bands, _PSNR_CAP)
    nonzero = mse > 0
    per_band[nonzero] = np.minimum(
        _PSNR_CAP, 10.0 * np.log10(peak * peak / mse[nonzero])
    )
    return BandPsnrReport(per_band=per_band, mean=float(per_band.mean()))


def masked_psnr(reference: HsiCube, estimate: HsiCube, select: np.ndarray,
                peak: float = 1.0) -> BandPsnrReport:
    """PSNR restricted to voxels where `select` is True (e.g. held-out positions)."""
    if reference.shape != estimate.shape or select.shape != reference.shape:
        raise ShapeError("masked_psnr needs reference, estimate, and mask of one shape")
    diff = reference.data.astype(np.float64) - estimate.data.astype(np.float64)
    per_band = np.empty(reference.bands)
    for b in range(reference.bands):
        sel = select[:, :, b]
        count = int(sel.sum())
        if count == 0:
            raise ValidationError(f"band {b} has no selected voxels")
        mse = float((diff[:, :, b][sel] ** 2).sum() / count)
        per_band[b] = _PSNR_CAP if mse == 0 else min(_PSNR_CAP, 10.0 * np.log10(peak * peak / mse))
    return BandPsnrReport(per_band=per_band, mean=float(per_band.mean()))


def mode_singular_values(cube: HsiCube, mode: int) -> SingularSpectrum:
    """Singular values of the mode-k unfolding (k = 1: rows, 2: columns, 3: bands).

    The unfolding reshapes the cube to (dim_k, everything else); its singular
    values do not depend on how the other two axes are ordered. Computed from
    the Gram matrix of the shorter side via a symmetric eigendecomposition.
    """
    if mode not in (1, 2, 3):
        raise ValidationError(f"mode must be 1, 2, or 3, got {mode}")
    a = np.moveaxis(cube.data.astype(np.float64, copy=False), mode - 1, 0)
    a = a.reshape(a.shape[0], -1)
    short = min(a.shape)
    if short <= 512:
        gram = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
        eig = np.linalg.eigvalsh(gram)
        values = np.sqrt(np.clip(eig, 0.0, None))[::-1]
    else:
        values = np.linalg.svd(a, compute_uv=False)
    return SingularSpectrum(mode=mode, values=np.ascontiguousarray(values[:short]))


def adjacent_diff_histogram(cube: HsiCube, direction: str, bins: int = 65) -> DiffHistogram:
    """Histogram of adjacent-voxel differences along one direction.

    Directions: 'x' (across columns), 'y' (across rows), 'z' (across bands),
    'diag_yz' (row +1 with band +1), 'antidiag_yz' (row +1 with band -1).
    Bins span [-1, 1]; differences outside (possible only for cubes leaving
    the nominal range) are clipped into the end bins so no sample is dropped.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    data = cube.data.astype(np.float64, copy=False)
    h, w, b = cube.shape
    if direction == "x":
        if w < 2:
            raise ValidationError("direction 'x' needs width >= 2")
        diff = data[:, 1:, :] - data[:, :-1, :]
    elif direction == "y":
        if h < 2:
            raise ValidationError("direction 'y' needs height >= 2")
        diff = data[1:, :, :] - data[:-1, :, :]
    elif direction == "z":
        if b < 2:
            raise ValidationError("direction 'z' needs bands >= 2")
        diff = data[:, :, 1:] - data[:, :, :-1]
    elif direction == "diag_yz":
        if h < 2 or b < 2:
            raise ValidationError("direction 'diag_yz' needs height >= 2 and bands >= 2")
        diff = data[1:, :, 1:] - data[:-1, :, :-1]
    elif direction == "antidiag_yz":
        if h < 2 or b < 2:
            raise ValidationError("direction 'antidiag_yz' needs height >= 2 and bands >= 2")
        diff = data[1:, :, :-1] - data[:-1, :, 1:]
    else:
        raise ValidationError(f"unknown direction {direction!r}, expected one of {DIRECTIONS}")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.clip(diff, -1.0, 1.0), bins=edges)
    zero_bin = int(np.searchsorted(edges, 0.0, side="right") - 1)
    zero_bin = min(zero_bin, bins - 1)
    return DiffHistogram(direction=direction, bin_edges=edges, counts=counts, zero_bin=zero_bin)
