"""
Synthetic digital elevation models for flood scenarios.

With normalized coordinates x ∈ [-1, 1] (west to east) and s ∈ [0, 1] (north to
south), relief R:

- bowl:      z = R · (x² + y²) / 2, y = 2s - 1; lowest at the center.
- valley:    z = R · (|x| + (1 - s)) / 2; a V-shaped valley falling to the south edge.
- two-river: z = R · (min(|x - c(s)|, |x + c(s)|) + (1 - s)) / 2 with
             c(s) = (1 - s) / 2; two channels that merge at the south edge.

Roughness adds a seeded, spectrally smoothed Gaussian field with standard deviation
`roughness` meters.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError
from .spectral import Field, wavenumbers

ROUGHNESS_CUTOFF = 0.25


class DemKind(str, Enum):
    BOWL = "bowl"
    VALLEY = "valley"
    TWO_RIVER = "two-river"


def smooth_noise(size: int, rng: np.random.Generator) -> Field:
    """
    Unit-variance noise low-passed at a quarter of the Nyquist wavenumber.
    """
    k = wavenumbers(size) / (size / 2)
    k_squared = k[:, None] ** 2 + k[None, :] ** 2
    noise = np.fft.ifft2(
        np.fft.fft2(rng.standard_normal((size, size)))
        * np.exp(-k_squared / ROUGHNESS_CUTOFF**2)
    ).real
    spread = noise.std()
    return noise / spread if spread > 0 else noise


def make_synthetic_dem(
    kind: DemKind | str,
    size: int,
    seed: int = 0,
    relief: float = 10.0,
    roughness: float = 0.1,
) -> Field:
    try:
        kind = DemKind(kind)
    except ValueError:
        raise ConfigError(
            f"Unknown DEM kind {kind!r}, expected one of "
            f"{[member.value for member in DemKind]}."
        ) from None

    if size < 2:
        raise ConfigError(f"DEM needs at least 2 cells per side, got {size}.")

    points = (np.arange(size) + 0.5) / size
    x, s = np.meshgrid(2 * points - 1, points)

    if kind is DemKind.BOWL:
        surface = (x**2 + (2 * s - 1) ** 2) / 2
    elif kind is DemKind.VALLEY:
        surface = (np.abs(x) + (1 - s)) / 2
    else:
        center = (1 - s) / 2
        surface = (np.minimum(np.abs(x - center), np.abs(x + center)) + (1 - s)) / 2

    dem = relief * surface

    if roughness > 0:
        dem = dem + roughness * smooth_noise(size, np.random.default_rng(seed))

    return np.ascontiguousarray(dem)
