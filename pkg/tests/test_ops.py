import numpy as np
import pytest

from pefnn import ops
from pefnn.kernels import KernelMode, KernelShape
from pefnn.tape import Tape


def test_linear_mixes_channels() -> None:
    tape = Tape()
    inputs = tape.leaf(np.arange(8.0).reshape(1, 2, 2, 2))
    weight = tape.leaf(np.array([[1.0, -1.0], [0.5, 0.5]]))
    bias = tape.leaf(np.array([0.0, 1.0]))

    output = ops.linear(inputs, weight, bias).value

    assert output[0, 0].tolist() == [[-4.0, -4.0], [-4.0, -4.0]]
    assert output[0, 1].tolist() == [[3.0, 4.0], [5.0, 6.0]]


def test_gelu_values() -> None:
    tape = Tape()
    output = ops.gelu(tape.leaf(np.array([-10.0, 0.0, 10.0]))).value

    assert output == pytest.approx([0.0, 0.0, 10.0], abs=1e-12)


def test_pad_and_crop() -> None:
    tape = Tape()
    inputs = tape.leaf(np.ones((1, 1, 3, 3)))
    padded = ops.pad_spatial(inputs, 2)

    assert padded.shape == (1, 1, 7, 7)
    assert padded.value.sum() == 9.0
    assert np.array_equal(ops.crop_spatial(padded, 2).value, inputs.value)


def test_groups_repeat_then_average() -> None:
    tape = Tape()
    inputs = tape.leaf(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
    repeated = ops.repeat_groups(inputs, 4)

    assert repeated.shape == (2, 12, 4, 4)
    assert np.allclose(ops.mean_groups(repeated, 4).value, inputs.value)


class TestSpectralConvolution:
    @staticmethod
    def test_constant_field() -> None:
        shape = KernelShape(KernelMode.SINGLE_ROTATION, 1, 1, 1)
        free = np.zeros(shape.size)
        free[-1] = 2.0
        tape = Tape()

        output = ops.spectral_convolution(
            tape.leaf(np.full((1, 1, 8, 8), 3.0)), tape.leaf(free), shape
        )

        assert output.value == pytest.approx(np.full((1, 1, 8, 8), 6.0))

    @staticmethod
    def test_high_modes_are_dropped() -> None:
        shape = KernelShape(KernelMode.DENSE, 1, 1, 1)
        free = np.zeros(shape.size)
        free[8] = 1.0
        checker = np.indices((8, 8)).sum(axis=0) % 2 * 2.0 - 1.0
        tape = Tape()

        output = ops.spectral_convolution(
            tape.leaf(checker[None, None]), tape.leaf(free), shape
        )

        assert np.abs(output.value).max() < 1e-12

    @staticmethod
    def test_translation_commutes() -> None:
        shape = KernelShape(KernelMode.MULTIPLE_ROTATION, 2, 2, 3)
        rng = np.random.default_rng(1)
        free = rng.standard_normal(shape.size)
        field = rng.standard_normal((1, 2, 10, 10))

        def convolve(values: np.ndarray) -> np.ndarray:
            tape = Tape()
            return ops.spectral_convolution(
                tape.leaf(values), tape.leaf(free), shape
            ).value

        shifted = np.roll(field, (3, -2), axis=(-2, -1))
        expected = np.roll(convolve(field), (3, -2), axis=(-2, -1))

        assert np.abs(convolve(shifted) - expected).max() < 1e-10

    @staticmethod
    def test_larger_kernels_approximate_no_worse() -> None:
        """
        A smoothing operator applied through kernels of growing radius, each holding
        the exact multiplier on its modes.
        """
        grid = 16
        field = np.random.default_rng(2).standard_normal((1, 1, grid, grid))
        k = np.fft.fftfreq(grid, d=1.0 / grid)
        multiplier = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / 8)
        target = np.fft.ifft2(multiplier * np.fft.fft2(field)).real
        errors = []

        for modes in range(8):
            shape = KernelShape(KernelMode.DENSE, modes, 1, 1)
            block = np.fft.fftshift(multiplier)[
                grid // 2 - modes : grid // 2 + modes + 1,
                grid // 2 - modes : grid // 2 + modes + 1,
            ]
            free = np.zeros(shape.size)
            free[0::2] = block.ravel()
            tape = Tape()

            output = ops.spectral_convolution(
                tape.leaf(field), tape.leaf(free), shape
            ).value
            errors.append(np.linalg.norm(output - target) / np.linalg.norm(target))

        assert all(larger <= smaller for smaller, larger in zip(errors, errors[1:]))
        assert errors[-1] < 1e-2 * errors[0]
