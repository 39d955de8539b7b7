"""
Differentiable operations on (batch, channel, height, width) variables.

Each function computes its forward value with numpy and records the vector-Jacobian
product on the tape of its inputs. Channels of grouped variables are folded as
`channel * group_size + group`.
"""

from __future__ import annotations

import functools
from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray

from . import kernels, spectral
from .errors import ShapeMismatch
from .tape import Array, Var

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
GELU_CUBIC = 0.044715


def add(left: Var, right: Var) -> Var:
    if left.shape != right.shape:
        raise ShapeMismatch(f"Cannot add shapes {left.shape} and {right.shape}.")

    return left.tape.apply(
        left.value + right.value, (left, right), lambda grad: (grad, grad)
    )


def scale(value: Var, factor: float) -> Var:
    return value.tape.apply(
        factor * value.value, (value,), lambda grad: (factor * grad,)
    )


def combine(terms: Sequence[tuple[float, Var]]) -> Var:
    """
    Linear combination Σ coefficient · variable of same-shaped variables.
    """
    coefficients = tuple(coefficient for coefficient, _ in terms)
    variables = tuple(variable for _, variable in terms)
    shapes = {variable.shape for variable in variables}

    if len(shapes) != 1:
        raise ShapeMismatch(f"Cannot combine shapes {sorted(shapes)}.")

    value = np.zeros(variables[0].shape)
    for coefficient, variable in terms:
        value = value + coefficient * variable.value

    def vjp(grad: Array) -> list[Array]:
        return [coefficient * grad for coefficient in coefficients]

    return variables[0].tape.apply(value, variables, vjp)


def linear(inputs: Var, weight: Var, bias: Var | None = None) -> Var:
    """
    Pointwise (1x1) channel mixing: y[b, o] = Σ_c weight[o, c] · x[b, c] + bias[o].
    """
    out_channels, in_channels = weight.shape

    if inputs.shape[1] != in_channels:
        raise ShapeMismatch(
            f"Linear layer expects {in_channels} channels, got {inputs.shape[1]}."
        )

    value = np.einsum("oc,bcyx->boyx", weight.value, inputs.value)

    if bias is not None:
        value = value + bias.value[None, :, None, None]

    def vjp(grad: Array) -> list[Array | None]:
        grads: list[Array | None] = [
            np.einsum("oc,boyx->bcyx", weight.value, grad),
            np.einsum("boyx,bcyx->oc", grad, inputs.value),
        ]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    parents = (inputs, weight) if bias is None else (inputs, weight, bias)
    return inputs.tape.apply(value, parents, vjp)


@functools.lru_cache(maxsize=None)
def group_offsets(group_size: int) -> NDArray[np.intp]:
    """
    offsets[g, h] = (h - g) mod group_size.
    """
    groups = np.arange(group_size)
    return (groups[None, :] - groups[:, None]) % group_size


def expand_group_weight(weight: Array) -> Array:
    """
    Dense (out·g, in·h) matrix of a cyclic group pointwise convolution whose weight is
    shaped (out, in, group_size).
    """
    out_channels, in_channels, group_size = weight.shape
    expanded = weight[:, :, group_offsets(group_size)].transpose(0, 2, 1, 3)
    return expanded.reshape(out_channels * group_size, in_channels * group_size)


def expand_group_weight_backward(grad: Array, group_size: int) -> Array:
    rows, cols = grad.shape
    out_channels, in_channels = rows // group_size, cols // group_size
    by_slot = grad.reshape(out_channels, group_size, in_channels, group_size)
    weight_grad = np.zeros((out_channels, in_channels, group_size))
    np.add.at(
        weight_grad,
        (slice(None), slice(None), group_offsets(group_size)),
        by_slot.transpose(0, 2, 1, 3),
    )
    return weight_grad


def group_linear(inputs: Var, weight: Var, bias: Var | None = None) -> Var:
    """
    Pointwise convolution over p4 group channels. `weight` is (out, in, group_size);
    output group g reads input group h through weight[:, :, (h - g) mod group_size].
    The bias is shared across groups.
    """
    group_size = weight.shape[2]
    expanded = weight.tape.apply(
        expand_group_weight(weight.value),
        (weight,),
        lambda grad: (expand_group_weight_backward(grad, group_size),),
    )

    if bias is None:
        return linear(inputs, expanded)

    repeated = bias.tape.apply(
        np.repeat(bias.value, group_size),
        (bias,),
        lambda grad: (grad.reshape(-1, group_size).sum(axis=1),),
    )
    return linear(inputs, expanded, repeated)


def gelu(inputs: Var) -> Var:
    """
    GELU, tanh approximation.
    """
    x = inputs.value
    inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)
    tanh = np.tanh(inner)
    value = 0.5 * x * (1.0 + tanh)

    def vjp(grad: Array) -> tuple[Array]:
        d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x**2)
        derivative = 0.5 * (1.0 + tanh) + 0.5 * x * (1.0 - tanh**2) * d_inner
        return (grad * derivative,)

    return inputs.tape.apply(value, (inputs,), vjp)


def product(factors: Sequence[Var]) -> Var:
    """
    Element-wise product of same-shaped variables. The cotangent of factor l is the
    product of all other factors, built from prefix and suffix products.
    """
    if not factors:
        raise ShapeMismatch("Product needs at least one factor.")

    values = [factor.value for factor in factors]

    if len({value.shape for value in values}) != 1:
        raise ShapeMismatch("Product factors must share one shape.")

    prefix = [np.ones_like(values[0])]
    for value in values[:-1]:
        prefix.append(prefix[-1] * value)

    suffix = [np.ones_like(values[0])]
    for value in reversed(values[1:]):
        suffix.append(suffix[-1] * value)
    suffix.reverse()

    def vjp(grad: Array) -> list[Array]:
        return [grad * before * after for before, after in zip(prefix, suffix)]

    return factors[0].tape.apply(prefix[-1] * values[-1], factors, vjp)


def repeat_groups(inputs: Var, group_size: int) -> Var:
    """
    Replicate every channel across `group_size` group slots.
    """
    if group_size == 1:
        return inputs

    batch, channels, height, width = inputs.shape

    def vjp(grad: Array) -> tuple[Array]:
        folded = grad.reshape(batch, channels, group_size, height, width)
        return (folded.sum(axis=2),)

    return inputs.tape.apply(
        np.repeat(inputs.value, group_size, axis=1), (inputs,), vjp
    )


def mean_groups(inputs: Var, group_size: int) -> Var:
    if group_size == 1:
        return inputs

    batch, folded, height, width = inputs.shape
    channels = folded // group_size
    grouped = inputs.value.reshape(batch, channels, group_size, height, width)

    def vjp(grad: Array) -> tuple[Array]:
        return (np.repeat(grad / group_size, group_size, axis=1),)

    return inputs.tape.apply(grouped.mean(axis=2), (inputs,), vjp)


def pad_spatial(inputs: Var, pad: int) -> Var:
    """
    Zero-pad both spatial axes by `pad` cells on each side.
    """
    if pad == 0:
        return inputs

    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))

    def vjp(grad: Array) -> tuple[Array]:
        return (np.ascontiguousarray(grad[..., pad:-pad, pad:-pad]),)

    return inputs.tape.apply(np.pad(inputs.value, widths), (inputs,), vjp)


def crop_spatial(inputs: Var, pad: int) -> Var:
    if pad == 0:
        return inputs

    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))

    def vjp(grad: Array) -> tuple[Array]:
        return (np.pad(grad, widths),)

    value = np.ascontiguousarray(inputs.value[..., pad:-pad, pad:-pad])
    return inputs.tape.apply(value, (inputs,), vjp)


def spectral_convolution(inputs: Var, kernel: Var, shape: kernels.KernelShape) -> Var:
    """
    Multiply the retained centered (2m+1)x(2m+1) modes of every input channel by the
    materialized kernel, contracting input channels (and input groups through the
    group action), then transform back. Discarded modes are zero.

    `kernel` holds the free values of a kernel of the given shape.
    """
    batch, channels, height, width = inputs.shape
    group_size = shape.group_size

    if channels != shape.in_channels * group_size:
        raise ShapeMismatch(
            f"Spectral layer expects {shape.in_channels * group_size} channels, "
            f"got {channels}."
        )

    params = kernels.KernelParams(shape, kernel.value)
    expanded = kernels.expand_group_kernel(kernels.materialize(params))
    side = shape.side
    modes = spectral.crop_modes(
        spectral.fftshift(spectral.fft2(inputs.value)), shape.modes
    ).reshape(batch, shape.in_channels, group_size, side, side)
    mixed = np.einsum("bchyx,chogyx->bogyx", modes, expanded)
    mixed = mixed.reshape(batch, shape.out_channels * group_size, side, side)
    hermitian = shape.mode is not kernels.KernelMode.DENSE
    value = spectral.ifft2(
        spectral.ifftshift(spectral.pad_modes(mixed, height, width)), check=hermitian
    )

    def vjp(grad: Array) -> tuple[Array, Array]:
        grad_mixed = spectral.crop_modes(
            spectral.fftshift(spectral.fft2(grad)), shape.modes
        ) / (height * width)
        grad_mixed = grad_mixed.reshape(
            batch, shape.out_channels, group_size, side, side
        )
        grad_modes = np.einsum("bogyx,chogyx->bchyx", grad_mixed, expanded.conj())
        grad_modes = grad_modes.reshape(batch, channels, side, side)
        spectrum = spectral.ifftshift(spectral.pad_modes(grad_modes, height, width))
        grad_inputs = spectral.ifft2(spectrum, check=False) * (height * width)
        grad_expanded = np.einsum("bogyx,bchyx->chogyx", grad_mixed, modes.conj())
        grad_kernel = kernels.materialize_backward(
            params, kernels.expand_group_kernel_backward(grad_expanded)
        )
        return grad_inputs, grad_kernel

    return inputs.tape.apply(value, (inputs, kernel), vjp)
