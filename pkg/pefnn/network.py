"""
PeFNN computation graph: lift P, a stack of momentum-conserving Fourier layers, product
fusion of the per-layer features, decoder Q and an explicit time integrator.

Parameters are an ordered name -> array mapping:

    lift.weight                 (width, in_channels)
    lift.bias                   (width,)
    layers.{l}.kernel           free kernel values, see `pefnn.kernels`
    layers.{l}.residual.weight  (width, width, group_size)
    layers.{l}.mlp.{0,1}.weight (width, width, group_size)
    layers.{l}.mlp.{0,1}.bias   (width,)
    decoder.0.weight            (width, width)
    decoder.0.bias              (width,)
    decoder.1.weight            (out_channels, width)
    decoder.1.bias              (out_channels,)
"""

from __future__ import annotations

import functools
from collections.abc import Callable, Mapping
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any

import numpy as np

from . import ops
from .errors import ConfigError, NonFinite, ShapeMismatch
from .kernels import KernelMode, KernelShape, init_kernel
from .tape import Array, Tape, Var

ModelParams = dict[str, Array]
Weights = Mapping[str, Var]
RightHandSide = Callable[[Var], Var]


class Integrator(str, Enum):
    EULER = "euler"
    RK3 = "rk3"


class Activation(str, Enum):
    GELU = "gelu"
    NONE = "none"


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    width: int = 10
    modes: int = 12
    kernel_mode: KernelMode = KernelMode.SINGLE_ROTATION
    group_size: int = 1
    in_channels: int = 1
    out_channels: int = 1
    dt: float = 1.0
    integrator: Integrator = Integrator.EULER
    pad: int = 0
    activation: Activation = Activation.GELU
    fusion_scale: float = 1.0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kernel_mode", KernelMode(self.kernel_mode))
            object.__setattr__(self, "integrator", Integrator(self.integrator))
            object.__setattr__(self, "activation", Activation(self.activation))
        except ValueError as error:
            raise ConfigError(f"Invalid model configuration: {error}") from error

        if self.layers < 1:
            raise ConfigError(f"Model needs at least one layer, got {self.layers}.")
        if self.width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("Channel counts must be positive.")
        if self.in_channels != self.out_channels:
            raise ConfigError(
                "The integrator adds F̂(u) to u, so in_channels must equal "
                f"out_channels (got {self.in_channels} and {self.out_channels})."
            )
        if self.modes < 0:
            raise ConfigError(f"Mode radius must be non-negative, got {self.modes}.")
        if self.group_size not in (1, 4):
            raise ConfigError(f"Group size must be 1 or 4, got {self.group_size}.")
        if not self.dt > 0:
            raise ConfigError(f"Time step must be positive, got {self.dt}.")
        if self.pad < 0:
            raise ConfigError(f"Padding must be non-negative, got {self.pad}.")

    @property
    def kernel_shape(self) -> KernelShape:
        return KernelShape(
            mode=self.kernel_mode,
            modes=self.modes,
            in_channels=self.width,
            out_channels=self.width,
            group_size=self.group_size,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            field.name: getattr(self, field.name).value
            if isinstance(getattr(self, field.name), Enum)
            else getattr(self, field.name)
            for field in fields(self)
        }


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    width, group_size = config.width, config.group_size
    shapes: dict[str, tuple[int, ...]] = {
        "lift.weight": (width, config.in_channels),
        "lift.bias": (width,),
    }

    for layer in range(config.layers):
        prefix = f"layers.{layer}"
        shapes[f"{prefix}.kernel"] = (config.kernel_shape.size,)
        shapes[f"{prefix}.residual.weight"] = (width, width, group_size)
        for index in range(2):
            shapes[f"{prefix}.mlp.{index}.weight"] = (width, width, group_size)
            shapes[f"{prefix}.mlp.{index}.bias"] = (width,)

    shapes["decoder.0.weight"] = (width, width)
    shapes["decoder.0.bias"] = (width,)
    shapes["decoder.1.weight"] = (config.out_channels, width)
    shapes["decoder.1.bias"] = (config.out_channels,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(config).values())


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """
    Kernels follow `pefnn.kernels.init_kernel`; pointwise weights and biases are
    uniform(±1/√fan_in), where a group weight's fan-in counts every input group.
    """
    params: ModelParams = {}

    for name, shape in parameter_shapes(config).items():
        if name.endswith(".kernel"):
            params[name] = init_kernel(config.kernel_shape, rng).free
            continue

        if name.startswith("lift."):
            fan_in = config.in_channels
        elif name.startswith("layers."):
            fan_in = config.width * config.group_size
        else:
            fan_in = config.width

        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)

    return params


def check_params(params: Mapping[str, Array], config: ModelConfig) -> None:
    expected = parameter_shapes(config)

    if list(params) != list(expected):
        missing = sorted(set(expected) - set(params))
        unexpected = sorted(set(params) - set(expected))
        raise ShapeMismatch(
            f"Parameters do not match the model: missing {missing}, "
            f"unexpected {unexpected}."
        )

    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeMismatch(
                f"Parameter {name} has shape {params[name].shape}, expected {shape}."
            )


def activate(inputs: Var, config: ModelConfig) -> Var:
    if config.activation is Activation.GELU:
        return ops.gelu(inputs)
    return inputs


def mc_fourier_layer(
    features: Var, layer: int, weights: Weights, config: ModelConfig
) -> Var:
    """
    f_l = W_l f + MLP_l(F⁻¹(F(f) · R_l)), where MLP_l is two group pointwise
    convolutions.
    """
    prefix = f"layers.{layer}"
    spectral = ops.spectral_convolution(
        features, weights[f"{prefix}.kernel"], config.kernel_shape
    )
    hidden = ops.group_linear(
        spectral, weights[f"{prefix}.mlp.0.weight"], weights[f"{prefix}.mlp.0.bias"]
    )
    hidden = ops.group_linear(
        activate(hidden, config),
        weights[f"{prefix}.mlp.1.weight"],
        weights[f"{prefix}.mlp.1.bias"],
    )
    residual = ops.group_linear(features, weights[f"{prefix}.residual.weight"])
    return ops.add(residual, hidden)


def check_finite(value: Var, what: str) -> None:
    if not np.isfinite(value.value).all():
        raise NonFinite(f"Non-finite values in {what}.")


def fhat_forward(inputs: Var, weights: Weights, config: ModelConfig) -> Var:
    """
    Learned right-hand side F̂(u) = Q · Π_l (fusion_scale · K_l), where K_l is the
    trunk output after layer l. With group channels the fused features are averaged
    over the group axis before decoding.
    """
    if inputs.shape[1] != config.in_channels:
        raise ShapeMismatch(
            f"Model expects {config.in_channels} input channels, "
            f"got {inputs.shape[1]}."
        )

    features = ops.linear(inputs, weights["lift.weight"], weights["lift.bias"])
    features = ops.repeat_groups(features, config.group_size)
    features = ops.pad_spatial(features, config.pad)
    depth_features = []

    for layer in range(config.layers):
        features = mc_fourier_layer(features, layer, weights, config)
        check_finite(features, f"layer {layer}")
        depth_features.append(
            ops.scale(ops.crop_spatial(features, config.pad), config.fusion_scale)
        )

    fused = ops.product(depth_features)
    check_finite(fused, "product fusion")
    fused = ops.mean_groups(fused, config.group_size)
    hidden = ops.linear(fused, weights["decoder.0.weight"], weights["decoder.0.bias"])
    return ops.linear(
        activate(hidden, config), weights["decoder.1.weight"], weights["decoder.1.bias"]
    )


def step(
    inputs: Var,
    weights: Weights,
    config: ModelConfig,
    rhs: RightHandSide | None = None,
) -> Var:
    """
    One integrator step u_{t+1} = u_t + Δt · F̂(u_t) (Euler) or Kutta's third-order
    scheme. `rhs` replaces F̂ with a fixed function.
    """
    if rhs is None:
        rhs = functools.partial(fhat_forward, weights=weights, config=config)

    dt = config.dt

    if config.integrator is Integrator.EULER:
        updated = ops.combine([(1.0, inputs), (dt, rhs(inputs))])
    else:
        k1 = rhs(inputs)
        k2 = rhs(ops.combine([(1.0, inputs), (dt / 2, k1)]))
        k3 = rhs(ops.combine([(1.0, inputs), (-dt, k1), (2 * dt, k2)]))
        updated = ops.combine(
            [(1.0, inputs), (dt / 6, k1), (4 * dt / 6, k2), (dt / 6, k3)]
        )

    check_finite(updated, "integrator step")
    return updated


def advance(
    inputs: Var,
    weights: Weights,
    config: ModelConfig,
    steps: int,
    rhs: RightHandSide | None = None,
) -> list[Var]:
    """
    Autoregressive rollout feeding each prediction back in. Returns every predicted
    state, the input excluded.
    """
    states = []
    state = inputs

    for _ in range(steps):
        state = step(state, weights, config, rhs)
        states.append(state)

    return states


@dataclass
class ModelGradients:
    params: ModelParams
    inputs: Array


def backward(
    tape: Tape, output: Var, cotangent: Array, weights: Weights, inputs: Var
) -> ModelGradients:
    gradients = tape.backward(output, cotangent)
    return ModelGradients(
        params={name: gradients[weight] for name, weight in weights.items()},
        inputs=gradients[inputs],
    )


def predict(
    state: Array,
    params: Mapping[str, Array],
    config: ModelConfig,
    steps: int = 1,
    rhs: RightHandSide | None = None,
) -> Array:
    """
    Rollout without gradients. Returns (steps, batch, channels, height, width); a
    fresh tape per step keeps memory flat.
    """
    states = []

    for _ in range(steps):
        tape = Tape()
        weights = tape.parameters(params)
        state = step(tape.leaf(state), weights, config, rhs).value
        states.append(state)

    return np.stack(states) if states else np.zeros((0,) + np.shape(state))
