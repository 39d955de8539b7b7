"""
Frequency-domain kernels of the momentum-conserving Fourier layer.

A kernel block is a centered (2m+1)x(2m+1) complex array per (c_in, c_out, group)
slot. Its free parameters are tied to the block by a fixed map in which every complex
slot takes its real and imaginary parts from at most one free value each, possibly
negated. The map is stored as gather indices plus signs, so materialization is a
gather and its adjoint a scatter-add.

Modes:
- Dense: every slot free (2 reals per slot, interleaved re/im).
- SingleRotation: the half-plane above the center row plus the left half of the
  center row is free; the other half is its conjugated point reflection. DC is real.
- MultipleRotation: the quadrant rows < center, columns <= center is free. For a free
  slot p, the 90° rotated slot carries the same value and the two remaining slots of
  its rotation orbit carry the conjugate. DC is real. The block is Hermitian and has
  90°-invariant magnitudes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .errors import NoGroupAxis, ShapeMismatch

MaterializedKernel = NDArray[np.complex128]


class KernelMode(str, Enum):
    DENSE = "dense"
    SINGLE_ROTATION = "single"
    MULTIPLE_ROTATION = "multiple"


@dataclass(frozen=True)
class Tying:
    """
    Slot map of one (2m+1)x(2m+1) block. Index `size` points at an implicit zero.
    """

    size: int
    real_index: NDArray[np.intp]
    real_sign: NDArray[np.float64]
    imag_index: NDArray[np.intp]
    imag_sign: NDArray[np.float64]


@dataclass(frozen=True)
class KernelShape:
    mode: KernelMode
    modes: int
    in_channels: int
    out_channels: int
    group_size: int = 1

    @property
    def side(self) -> int:
        return 2 * self.modes + 1

    @property
    def blocks(self) -> int:
        return self.in_channels * self.out_channels * self.group_size

    @property
    def block_size(self) -> int:
        return tying(self.mode, self.modes).size

    @property
    def size(self) -> int:
        return self.blocks * self.block_size

    @property
    def materialized_shape(self) -> tuple[int, int, int, int, int]:
        return (
            self.in_channels,
            self.out_channels,
            self.group_size,
            self.side,
            self.side,
        )


@dataclass
class KernelParams:
    shape: KernelShape
    free: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.free.shape != (self.shape.size,):
            raise ShapeMismatch(
                f"Kernel {self.shape} needs {self.shape.size} free values, "
                f"got shape {self.free.shape}."
            )


def free_parameter_count(mode: KernelMode, modes: int) -> int:
    """
    Free reals in one (c_in, c_out, group) block.
    """
    return tying(mode, modes).size


@functools.lru_cache(maxsize=None)
def tying(mode: KernelMode, modes: int) -> Tying:
    side = 2 * modes + 1
    center = modes
    slots = side * side
    real_index = np.full(slots, -1, dtype=np.intp)
    imag_index = np.full(slots, -1, dtype=np.intp)
    real_sign = np.ones(slots)
    imag_sign = np.ones(slots)

    def slot(row: int, col: int) -> int:
        return (row + center) * side + (col + center)

    if mode is KernelMode.DENSE:
        size = 2 * slots
        real_index[:] = np.arange(0, size, 2)
        imag_index[:] = np.arange(1, size, 2)

    elif mode is KernelMode.SINGLE_ROTATION:
        half = [
            (row, col)
            for row in range(-center, center + 1)
            for col in range(-center, center + 1)
            if row < 0 or (row == 0 and col < 0)
        ]
        size = 2 * len(half) + 1

        for free, (row, col) in enumerate(half):
            pair = ((slot(row, col), False), (slot(-row, -col), True))

            for target, conjugate in pair:
                real_index[target] = 2 * free
                imag_index[target] = 2 * free + 1
                imag_sign[target] = -1.0 if conjugate else 1.0

    elif mode is KernelMode.MULTIPLE_ROTATION:
        quadrant = [
            (row, col) for row in range(-center, 0) for col in range(-center, 1)
        ]
        size = 2 * len(quadrant) + 1

        for free, (row, col) in enumerate(quadrant):
            orbit = (
                (slot(row, col), False),
                (slot(col, -row), False),
                (slot(-row, -col), True),
                (slot(-col, row), True),
            )

            for target, conjugate in orbit:
                real_index[target] = 2 * free
                imag_index[target] = 2 * free + 1
                imag_sign[target] = -1.0 if conjugate else 1.0

    else:
        raise ShapeMismatch(f"Unknown kernel mode {mode!r}.")

    if mode is not KernelMode.DENSE:
        dc = slot(0, 0)
        real_index[dc] = size - 1
        imag_index[dc] = -1

    real_index[real_index < 0] = size
    imag_index[imag_index < 0] = size

    for array in (real_index, real_sign, imag_index, imag_sign):
        array.setflags(write=False)

    return Tying(size, real_index, real_sign, imag_index, imag_sign)


def init_kernel(shape: KernelShape, rng: np.random.Generator) -> KernelParams:
    """
    Uniform(-a, a) free values with a = 1 / (c_in · (2m+1)²).
    """
    bound = 1.0 / (shape.in_channels * shape.side**2)
    return KernelParams(shape, rng.uniform(-bound, bound, size=shape.size))


def materialize(params: KernelParams) -> MaterializedKernel:
    """
    Build the complex (c_in, c_out, group, 2m+1, 2m+1) kernel, DC centered.
    """
    shape = params.shape
    tied = tying(shape.mode, shape.modes)
    free = params.free.reshape(shape.blocks, tied.size)
    padded = np.concatenate([free, np.zeros((shape.blocks, 1))], axis=1)
    real = tied.real_sign * padded[:, tied.real_index]
    imag = tied.imag_sign * padded[:, tied.imag_index]
    return (real + 1j * imag).reshape(shape.materialized_shape)


def materialize_backward(
    params: KernelParams, cotangent: MaterializedKernel
) -> NDArray[np.float64]:
    """
    Adjoint of `materialize`: scatter-add every slot's cotangent into its free
    source, negating the imaginary part where the forward conjugated.
    """
    shape = params.shape

    if cotangent.shape != shape.materialized_shape:
        raise ShapeMismatch(
            f"Kernel cotangent has shape {cotangent.shape}, "
            f"expected {shape.materialized_shape}."
        )

    tied = tying(shape.mode, shape.modes)
    blocks = cotangent.reshape(shape.blocks, shape.side**2)
    gradient = np.zeros((tied.size + 1, shape.blocks))
    np.add.at(gradient, tied.real_index, (tied.real_sign * blocks.real).T)
    np.add.at(gradient, tied.imag_index, (tied.imag_sign * blocks.imag).T)
    return np.ascontiguousarray(gradient[:-1].T).reshape(-1)


def group_action_shift(kernel: MaterializedKernel, shift: int) -> MaterializedKernel:
    """
    p4 action on a kernel: cyclically shift the group axis by `shift` and rotate
    every block by `shift` quarter turns about its DC bin.
    """
    if kernel.shape[2] == 1:
        raise NoGroupAxis("Kernel has no group axis to act on.")

    rolled = np.roll(kernel, shift, axis=2)
    return np.ascontiguousarray(np.rot90(rolled, k=shift, axes=(-2, -1)))


def group_action_unshift(kernel: MaterializedKernel, shift: int) -> MaterializedKernel:
    """
    Inverse (and adjoint) of `group_action_shift`.
    """
    rotated = np.rot90(kernel, k=-shift, axes=(-2, -1))
    return np.ascontiguousarray(np.roll(rotated, -shift, axis=2))


def expand_group_kernel(kernel: MaterializedKernel) -> NDArray[np.complex128]:
    """
    Kernel of the full group convolution, shaped (c_in, h, c_out, g, n, n):
    the (h -> g) entry is the g-fold action on the kernel, read at input group h.
    """
    group_size = kernel.shape[2]

    if group_size == 1:
        expanded = kernel[:, :, :, None]
    else:
        expanded = np.stack(
            [group_action_shift(kernel, shift) for shift in range(group_size)], axis=3
        )

    return np.ascontiguousarray(expanded.transpose(0, 2, 1, 3, 4, 5))


def expand_group_kernel_backward(
    cotangent: NDArray[np.complex128],
) -> MaterializedKernel:
    by_output = cotangent.transpose(0, 2, 1, 3, 4, 5)
    group_size = by_output.shape[3]

    if group_size == 1:
        return np.ascontiguousarray(by_output[:, :, :, 0])

    gradient = np.zeros(by_output.shape[:3] + by_output.shape[4:], dtype=np.complex128)

    for shift in range(group_size):
        gradient += group_action_unshift(by_output[:, :, :, shift], shift)

    return gradient
