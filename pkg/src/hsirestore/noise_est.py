"""Blind estimation of additive Gaussian noise level.

Each band is filtered with the 3x3 second-difference stencil

    [[ 1, -2,  1],
     [-2,  4, -2],
     [ 1, -2,  1]]

evaluated only where the stencil fits entirely inside the band (so constant
and linear-ramp images give an exactly zero response). The stencil annihilates
locally affine structure while its response to unit-variance white noise has
standard deviation 6, so with the half-normal correction sqrt(pi/2) the band
estimate is

    sigma_band = sqrt(pi/2) * sum |response| / (6 * (h - 2) * (w - 2))

The cube estimate is the median over bands, which shrugs off a minority of
outlier bands.
"""

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube
from .errors import ValidationError

_STENCIL = np.array([[1.0, -2.0, 1.0],
                     [-2.0, 4.0, -2.0],
                     [1.0, -2.0, 1.0]])


@dataclass
class SigmaEstimate:
    sigma: float
    per_band: np.ndarray


def estimate_sigma(cube: HsiCube) -> SigmaEstimate:
    h, w, _ = cube.shape
    if h < 3 or w < 3:
        raise ValidationError(f"noise estimation needs at least 3x3 bands, got {h}x{w}")
    data = cube.data.astype(np.float64, copy=False)
    response = np.zeros((h - 2, w - 2, cube.bands), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            response += _STENCIL[i, j] * data[i:i + h - 2, j:j + w - 2, :]
    scale = np.sqrt(np.pi / 2.0) / (6.0 * (h - 2) * (w - 2))
    per_band = scale * np.abs(response).sum(axis=(0, 1))
    return SigmaEstimate(sigma=float(np.median(per_band)), per_band=per_band)
