"""
Array substrate for (batch, channel, height, width) grids: unnormalized 2D DFTs,
centered-frequency shifts, low-mode cropping/embedding, and exact rotations and
cyclic shifts.

`numpy.fft` (pocketfft) handles arbitrary sizes with a mixed-radix/Bluestein path, so
flood grids that are not powers of two need no special casing here.
"""

from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import NDArray

from .errors import ImaginaryResidue, ModeOverflow, ShapeMismatch

Field = NDArray[np.float64]
ComplexField = NDArray[np.complex128]
SpectralBlock = NDArray[np.complex128]

AXES = (-2, -1)
IMAGINARY_TOLERANCE = 1e-9


def fft2(field: NDArray[Any]) -> ComplexField:
    """
    Unnormalized forward 2D DFT of every (batch, channel) slice.
    """
    return np.fft.fft2(field, axes=AXES)


def ifft2(spectrum: ComplexField, *, check: bool = True) -> Field:
    """
    Inverse 2D DFT with 1/(H·W) normalization, returning the real part.

    With `check`, the discarded imaginary part must be below `IMAGINARY_TOLERANCE`
    relative to max(1, max|real|); anything larger means the spectrum was not
    Hermitian and `ImaginaryResidue` is raised.
    """
    values = np.fft.ifft2(spectrum, axes=AXES)

    if check and values.size:
        residue = float(np.abs(values.imag).max())
        scale = max(1.0, float(np.abs(values.real).max()))

        if residue >= IMAGINARY_TOLERANCE * scale:
            raise ImaginaryResidue(residue)

    return np.ascontiguousarray(values.real)


def fftshift(spectrum: NDArray[Any]) -> NDArray[Any]:
    """
    Move the DC bin from (0, 0) to (H // 2, W // 2).
    """
    return np.fft.fftshift(spectrum, axes=AXES)


def ifftshift(spectrum: NDArray[Any]) -> NDArray[Any]:
    return np.fft.ifftshift(spectrum, axes=AXES)


def check_modes(height: int, width: int, modes: int) -> None:
    if modes < 0 or 2 * modes + 1 > min(height, width):
        raise ModeOverflow(
            f"Mode radius {modes} needs a {2 * modes + 1}x{2 * modes + 1} block, "
            f"which does not fit a {height}x{width} grid."
        )


def crop_modes(spectrum: NDArray[Any], modes: int) -> NDArray[Any]:
    """
    Extract the centered (2m+1)x(2m+1) block of an fftshifted spectrum.
    """
    height, width = spectrum.shape[-2:]
    check_modes(height, width, modes)
    cy, cx = height // 2, width // 2
    rows = slice(cy - modes, cy + modes + 1)
    cols = slice(cx - modes, cx + modes + 1)
    return spectrum[..., rows, cols].copy()


def pad_modes(block: NDArray[Any], height: int, width: int) -> NDArray[Any]:
    """
    Embed a centered block into an fftshifted (height, width) spectrum of zeros.

    The block only depends on the mode radius, not on the grid, so the same block
    can be embedded at any resolution that fits it.
    """
    side = block.shape[-1]

    if block.shape[-2] != side or side % 2 == 0:
        raise ShapeMismatch(
            f"Spectral block must be square with odd side, got {block.shape[-2:]}."
        )

    modes = (side - 1) // 2
    check_modes(height, width, modes)
    cy, cx = height // 2, width // 2
    spectrum = np.zeros(block.shape[:-2] + (height, width), dtype=block.dtype)
    spectrum[..., cy - modes : cy + modes + 1, cx - modes : cx + modes + 1] = block
    return spectrum


def rot90(field: NDArray[Any], turns: int) -> NDArray[Any]:
    """
    Rotate the two trailing axes by `turns` quarter turns (counter-clockwise in
    array display order).
    """
    return np.ascontiguousarray(np.rot90(field, k=turns, axes=AXES))


def rot90_block(block: NDArray[Any], turns: int) -> NDArray[Any]:
    """
    Rotate a centered spectral block about its DC bin.
    """
    height, width = block.shape[-2:]

    if height != width or height % 2 == 0:
        raise ShapeMismatch(
            f"Spectral block must be square with odd side, got {(height, width)}."
        )

    return rot90(block, turns)


def shift2(field: NDArray[Any], dy: int, dx: int) -> NDArray[Any]:
    """
    Cyclic shift of the two trailing axes.
    """
    return np.roll(field, (dy, dx), axis=AXES)


def wavenumbers(size: int) -> NDArray[np.float64]:
    """
    Integer wavenumbers in `numpy.fft` order.
    """
    return np.fft.fftfreq(size, d=1.0 / size)
