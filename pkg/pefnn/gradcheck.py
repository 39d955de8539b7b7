"""
Central finite-difference check of the hand-written backward pass.

Every objective is differentiated with respect to the model parameters and its input
field. Slots are sampled one per tensor first, then at random until the slot budget
is reached.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import network, ops, training
from .errors import ConfigError, GradcheckFailure
from .kernels import KernelMode
from .network import ModelConfig
from .tape import Array, Tape, Var

logger = logging.getLogger(__name__)

INPUTS = "inputs"

Objective = Callable[[Mapping[str, Array]], tuple[float, dict[str, Array]]]


class LossPath(str, Enum):
    STEP = "step"
    MARKOV = "markov"
    RECURRENT = "recurrent"


@dataclass(frozen=True)
class GradcheckConfig:
    grid: int = 8
    batch: int = 2
    slots: int = 50
    eps: float = 1e-5
    tolerance: float = 1e-5
    rollout_steps: int = 3
    param_scale: float = 0.5
    group_sizes: tuple[int, ...] = (1, 4)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "group_sizes", tuple(self.group_sizes))

        if self.slots < 1 or self.eps <= 0 or self.tolerance <= 0:
            raise ConfigError("Gradcheck slots, eps and tolerance must be positive.")
        if self.rollout_steps < 1:
            raise ConfigError("Gradcheck rollout needs at least one step.")


@dataclass
class GradcheckResult:
    kernel_mode: KernelMode
    group_size: int
    path: LossPath
    slots: int
    worst_error: float
    worst_slot: str


@dataclass
class GradcheckReport:
    results: list[GradcheckResult]
    tolerance: float

    @property
    def worst_error(self) -> float:
        return max((result.worst_error for result in self.results), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance

    def by_mode(self) -> dict[KernelMode, float]:
        worst: dict[KernelMode, float] = {}
        for result in self.results:
            worst[result.kernel_mode] = max(
                worst.get(result.kernel_mode, 0.0), result.worst_error
            )
        return worst

    def raise_for_failure(self) -> None:
        if not self.passed:
            raise GradcheckFailure(
                f"Worst relative gradient error {self.worst_error:.3e} exceeds "
                f"{self.tolerance:.1e}."
            )


def random_params(
    config: ModelConfig, rng: np.random.Generator, scale: float
) -> network.ModelParams:
    return {
        name: rng.uniform(-scale, scale, size=shape)
        for name, shape in network.parameter_shapes(config).items()
    }


def make_objective(
    path: LossPath,
    config: ModelConfig,
    targets: Array,
    cotangent: Array,
    rollout_steps: int,
) -> Objective:
    """
    Loss over {parameters..., "inputs": field} and its gradient for each entry.
    """

    def loss(state: Var, weights: Mapping[str, Var]) -> Var:
        if path is LossPath.STEP:
            output = network.step(state, weights, config)
            return output.tape.apply(
                np.asarray(float(np.sum(cotangent * output.value))),
                (output,),
                lambda grad: (float(grad) * cotangent,),
            )

        if path is LossPath.MARKOV:
            return training.record_relative_l2(
                network.step(state, weights, config), targets[:, 0]
            )

        predictions = network.advance(state, weights, config, rollout_steps)
        losses = [
            training.record_relative_l2(prediction, targets[:, index])
            for index, prediction in enumerate(predictions)
        ]
        return ops.combine([(1.0 / rollout_steps, value) for value in losses])

    def objective(variables: Mapping[str, Array]) -> tuple[float, dict[str, Array]]:
        tape = Tape()
        weights = tape.parameters(
            {name: value for name, value in variables.items() if name != INPUTS}
        )
        state = tape.leaf(variables[INPUTS])
        value = loss(state, weights)
        gradients = network.backward(tape, value, np.asarray(1.0), weights, state)
        return float(value.value), {**gradients.params, INPUTS: gradients.inputs}

    return objective


def sample_slots(
    variables: Mapping[str, Array], count: int, rng: np.random.Generator
) -> Iterator[tuple[str, int]]:
    names = list(variables)

    for name in names:
        yield name, int(rng.integers(variables[name].size))

    sizes = np.array([variables[name].size for name in names], dtype=np.float64)

    for _ in range(max(count - len(names), 0)):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        yield name, int(rng.integers(variables[name].size))


def check_objective(
    objective: Objective,
    variables: Mapping[str, Array],
    slots: int,
    eps: float,
    rng: np.random.Generator,
) -> tuple[float, str, int]:
    """
    Worst relative error |fd - analytic| / max(|fd|, |analytic|, 1e-3 · max|grad|)
    over the sampled slots.
    """
    _, grads = objective(variables)
    floor = 1e-3 * max(float(np.abs(grad).max()) for grad in grads.values())
    floor = max(floor, 1e-300)
    worst, worst_slot, checked = 0.0, "", 0

    for name, index in sample_slots(variables, slots, rng):
        shifted = {key: value.copy() for key, value in variables.items()}
        flat = shifted[name].reshape(-1)
        original = flat[index]
        flat[index] = original + eps
        plus, _ = objective(shifted)
        flat[index] = original - eps
        minus, _ = objective(shifted)

        numeric = (plus - minus) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[index])
        error = abs(numeric - analytic) / max(abs(numeric), abs(analytic), floor)
        checked += 1

        if error > worst:
            worst, worst_slot = error, f"{name}[{index}]"

    return worst, worst_slot, checked


def gradcheck(
    model_config: ModelConfig, config: GradcheckConfig | None = None
) -> GradcheckReport:
    """
    Check every kernel mode and group size of `model_config`'s architecture on every
    loss path.
    """
    config = config or GradcheckConfig()
    results = []

    for kernel_mode in KernelMode:
        for group_size in config.group_sizes:
            model = dataclasses.replace(
                model_config, kernel_mode=kernel_mode, group_size=group_size
            )
            rng = np.random.default_rng(
                [config.seed, list(KernelMode).index(kernel_mode), group_size]
            )
            params = random_params(model, rng, config.param_scale)
            shape = (config.batch, model.in_channels, config.grid, config.grid)
            inputs = rng.standard_normal(shape)
            targets = rng.standard_normal(
                (config.batch, config.rollout_steps, model.out_channels)
                + shape[2:]
            )
            cotangent = rng.standard_normal(
                (config.batch, model.out_channels) + shape[2:]
            )
            variables = {**params, INPUTS: inputs}

            for path in LossPath:
                objective = make_objective(
                    path, model, targets, cotangent, config.rollout_steps
                )
                worst, slot, checked = check_objective(
                    objective, variables, config.slots, config.eps, rng
                )
                logger.info(
                    f"Gradcheck {kernel_mode.value} group_size={group_size} "
                    f"{path.value}: worst relative error {worst:.3e} at {slot}"
                )
                results.append(
                    GradcheckResult(kernel_mode, group_size, path, checked, worst, slot)
                )

    return GradcheckReport(results, config.tolerance)
