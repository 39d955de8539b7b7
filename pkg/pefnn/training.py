"""
Optimizer, learning-rate schedule, relative L2 loss and the two training strategies:

- Markov: supervised one-step pairs (u_t, u_{t+1}).
- Recurrent: autoregressive rollouts from the first slice of each trajectory with
  backpropagation through every step.

Trajectory arrays are shaped (trajectories, time, channels, height, width).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import polars

from . import ops
from .errors import ConfigError, NonFinite, ShapeMismatch, ZeroReference
from .network import ModelConfig, ModelParams, advance, predict, step
from .tape import Array, Tape, Var
from .utils import atomic_write

logger = logging.getLogger(__name__)

ZERO_REFERENCE_NORM = 1e-30


class Strategy(str, Enum):
    MARKOV = "markov"
    RECURRENT = "recurrent"


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy = Strategy.MARKOV
    epochs: int = 100
    batch_size: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    seed: int = 0
    grad_clip: float | None = None
    rollout_steps: int | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError as error:
            raise ConfigError(f"Invalid training configuration: {error}") from error

        if self.epochs < 0:
            raise ConfigError(f"Epoch count must be non-negative, got {self.epochs}.")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be positive, got {self.batch_size}.")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie strictly between 0 and 1.")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("Learning rate and weight decay must be non-negative.")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"Gradient clip must be positive, got {self.grad_clip}.")
        if self.rollout_steps is not None and self.rollout_steps < 1:
            raise ConfigError(
                f"Rollout steps must be positive, got {self.rollout_steps}."
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "rollout_steps": self.rollout_steps,
        }


@dataclass
class OptimizerState:
    """
    Adam first and second moments per parameter, plus the update counter.
    """

    first: dict[str, Array]
    second: dict[str, Array]
    steps: int = 0

    @staticmethod
    def zeros(params: Mapping[str, Array]) -> "OptimizerState":
        return OptimizerState(
            first={name: np.zeros_like(value) for name, value in params.items()},
            second={name: np.zeros_like(value) for name, value in params.items()},
        )


@dataclass
class HistoryEntry:
    epoch: int
    lr: float
    train_loss: float
    valid_loss: float | None


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    best_epoch: int | None
    history: list[HistoryEntry]
    optimizer: OptimizerState
    next_epoch: int

    @property
    def best_loss(self) -> float | None:
        if self.best_epoch is None:
            return None
        entry = next(entry for entry in self.history if entry.epoch == self.best_epoch)
        return entry.valid_loss if entry.valid_loss is not None else entry.train_loss


def cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    """
    lr(e) = lr0 · (1 + cos(π e / E)) / 2.
    """
    if epochs == 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * epoch / epochs)) / 2.0


def adam_update(
    params: Mapping[str, Array],
    grads: Mapping[str, Array],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> tuple[ModelParams, OptimizerState]:
    """
    Adam with decoupled weight decay:
    θ ← θ - lr · wd · θ - lr · m̂ / (√v̂ + ε).
    """
    steps = state.steps + 1
    beta1, beta2 = config.beta1, config.beta2
    first, second, updated = {}, {}, {}

    for name, value in params.items():
        grad = grads[name]
        first[name] = beta1 * state.first[name] + (1 - beta1) * grad
        second[name] = beta2 * state.second[name] + (1 - beta2) * grad**2
        first_hat = first[name] / (1 - beta1**steps)
        second_hat = second[name] / (1 - beta2**steps)
        updated[name] = (
            value
            - lr * config.weight_decay * value
            - lr * first_hat / (np.sqrt(second_hat) + config.eps)
        )

    return updated, OptimizerState(first, second, steps)


def clip_gradients(grads: Mapping[str, Array], max_norm: float) -> dict[str, Array]:
    norm = math.sqrt(sum(float(np.sum(grad**2)) for grad in grads.values()))

    if norm <= max_norm:
        return dict(grads)

    factor = max_norm / norm
    return {name: grad * factor for name, grad in grads.items()}


def sample_norms(values: Array) -> Array:
    return np.sqrt(np.sum(values.reshape(values.shape[0], -1) ** 2, axis=1))


def relative_l2_loss(pred: Array, truth: Array) -> tuple[float, Array]:
    """
    Mean over the batch of ‖pred - truth‖₂ / ‖truth‖₂ and its cotangent with
    respect to `pred`.
    """
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"Prediction {pred.shape} does not match {truth.shape}.")

    truth_norms = sample_norms(truth)

    if (truth_norms < ZERO_REFERENCE_NORM).any():
        raise ZeroReference("A reference sample has zero norm.")

    difference = pred - truth
    difference_norms = sample_norms(difference)
    batch = pred.shape[0]
    loss = float(np.mean(difference_norms / truth_norms))

    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(
            difference_norms > 0,
            1.0 / (difference_norms * truth_norms * batch),
            0.0,
        )

    cotangent = difference * weights.reshape((batch,) + (1,) * (pred.ndim - 1))
    return loss, cotangent


def record_relative_l2(pred: Var, truth: Array) -> Var:
    """
    `relative_l2_loss` as a scalar tape variable.
    """
    loss, cotangent = relative_l2_loss(pred.value, truth)
    return pred.tape.apply(
        np.asarray(loss), (pred,), lambda grad: (float(grad) * cotangent,)
    )


def loss_and_gradients(
    params: Mapping[str, Array],
    loss_fn: Callable[[Var, Mapping[str, Var]], Var],
    inputs: Array,
) -> tuple[float, ModelParams]:
    tape = Tape()
    weights = tape.parameters(params)
    loss = loss_fn(tape.leaf(inputs), weights)
    gradients = tape.backward(loss, np.asarray(1.0))
    return float(loss.value), {name: gradients[var] for name, var in weights.items()}


def markov_loss(
    params: Mapping[str, Array],
    config: ModelConfig,
    inputs: Array,
    targets: Array,
) -> tuple[float, ModelParams]:
    """
    Loss and parameter gradients of relative_l2(step(u_t), u_{t+1}).
    """

    def loss_fn(state: Var, weights: Mapping[str, Var]) -> Var:
        return record_relative_l2(step(state, weights, config), targets)

    return loss_and_gradients(params, loss_fn, inputs)


def recurrent_loss(
    params: Mapping[str, Array],
    config: ModelConfig,
    trajectories: Array,
    steps: int,
) -> tuple[float, ModelParams]:
    """
    Loss and parameter gradients of the mean per-step relative L2 of a `steps` long
    rollout from slice 0 of every trajectory.
    """
    if trajectories.shape[1] < steps + 1:
        raise ShapeMismatch(
            f"Rollout of {steps} steps needs {steps + 1} slices, "
            f"got {trajectories.shape[1]}."
        )

    def loss_fn(state: Var, weights: Mapping[str, Var]) -> Var:
        predictions = advance(state, weights, config, steps)
        losses = [
            record_relative_l2(prediction, trajectories[:, index + 1])
            for index, prediction in enumerate(predictions)
        ]
        return ops.combine([(1.0 / steps, loss) for loss in losses])

    return loss_and_gradients(params, loss_fn, trajectories[:, 0])


def markov_pairs(trajectories: Array) -> Array:
    """
    Every (trajectory, time) index with a successor slice.
    """
    count, length = trajectories.shape[:2]
    if length < 2:
        raise ShapeMismatch("Markov training needs trajectories of at least 2 slices.")
    return np.array([(i, t) for i in range(count) for t in range(length - 1)])


def batches(indices: Array, batch_size: int) -> Iterator[Array]:
    for start in range(0, len(indices), batch_size):
        yield indices[start : start + batch_size]


def rollout_steps(trajectories: Array, config: TrainConfig) -> int:
    available = trajectories.shape[1] - 1
    steps = config.rollout_steps if config.rollout_steps is not None else available

    if steps > available or steps < 1:
        raise ShapeMismatch(
            f"Rollout of {steps} steps needs {steps + 1} slices, "
            f"got {trajectories.shape[1]}."
        )

    return steps


def evaluate_loss(
    params: Mapping[str, Array],
    model_config: ModelConfig,
    train_config: TrainConfig,
    trajectories: Array,
) -> float:
    """
    Loss of the training objective without gradients, averaged over every sample.
    """
    losses: list[float] = []

    if train_config.strategy is Strategy.MARKOV:
        pairs = markov_pairs(trajectories)
        for batch in batches(pairs, train_config.batch_size):
            inputs = trajectories[batch[:, 0], batch[:, 1]]
            targets = trajectories[batch[:, 0], batch[:, 1] + 1]
            prediction = predict(inputs, params, model_config)[0]
            losses.extend([relative_l2_loss(prediction, targets)[0]] * len(batch))
    else:
        steps = rollout_steps(trajectories, train_config)
        for batch in batches(np.arange(len(trajectories)), train_config.batch_size):
            predictions = predict(trajectories[batch, 0], params, model_config, steps)
            per_step = [
                relative_l2_loss(predictions[index], trajectories[batch, index + 1])[0]
                for index in range(steps)
            ]
            losses.extend([float(np.mean(per_step))] * len(batch))

    return float(np.mean(losses))


def train(
    trajectories: Array,
    params: Mapping[str, Array],
    model_config: ModelConfig,
    train_config: TrainConfig,
    *,
    valid: Array | None = None,
    optimizer: OptimizerState | None = None,
    start_epoch: int = 0,
    stop_epoch: int | None = None,
    on_epoch: Callable[[HistoryEntry], None] | None = None,
) -> TrainResult:
    """
    Run epochs `start_epoch .. epochs - 1` of the configured strategy, or stop early
    before `stop_epoch` (the learning-rate schedule still spans `epochs`).

    Epoch shuffles come from a generator seeded with (seed, epoch), so a run resumed
    at epoch e with the saved optimizer state reproduces the uninterrupted run.
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    optimizer = optimizer or OptimizerState.zeros(params)
    best_params = dict(params)
    best_epoch: int | None = None
    best_loss = math.inf
    history: list[HistoryEntry] = []

    if train_config.strategy is Strategy.MARKOV:
        samples, steps = markov_pairs(trajectories), 1
    else:
        samples = np.arange(len(trajectories))
        steps = rollout_steps(trajectories, train_config)

    end = train_config.epochs
    if stop_epoch is not None:
        end = min(stop_epoch, end)

    for epoch in range(start_epoch, end):
        lr = cosine_lr(train_config.lr, epoch, train_config.epochs)
        rng = np.random.default_rng([train_config.seed, epoch])
        order = samples[rng.permutation(len(samples))]
        total, seen = 0.0, 0

        try:
            for batch in batches(order, train_config.batch_size):
                if train_config.strategy is Strategy.MARKOV:
                    loss, grads = markov_loss(
                        params,
                        model_config,
                        trajectories[batch[:, 0], batch[:, 1]],
                        trajectories[batch[:, 0], batch[:, 1] + 1],
                    )
                else:
                    loss, grads = recurrent_loss(
                        params, model_config, trajectories[batch], steps
                    )

                if not math.isfinite(loss):
                    raise NonFinite("Training loss is not finite.")

                if train_config.grad_clip is not None:
                    grads = clip_gradients(grads, train_config.grad_clip)

                params, optimizer = adam_update(
                    params, grads, optimizer, lr, train_config
                )
                total += loss * len(batch)
                seen += len(batch)

            valid_loss = (
                evaluate_loss(params, model_config, train_config, valid)
                if valid is not None and len(valid)
                else None
            )
        except NonFinite as error:
            raise NonFinite(str(error), epoch=epoch) from error

        entry = HistoryEntry(epoch, lr, total / max(seen, 1), valid_loss)
        history.append(entry)
        logger.info(
            f"Epoch {epoch}: lr={lr:.3e} train_loss={entry.train_loss:.6e} "
            f"valid_loss={valid_loss if valid_loss is None else f'{valid_loss:.6e}'}"
        )

        tracked = valid_loss if valid_loss is not None else entry.train_loss
        if tracked < best_loss:
            best_loss, best_epoch, best_params = tracked, epoch, dict(params)

        if on_epoch is not None:
            on_epoch(entry)

    return TrainResult(
        params=params,
        best_params=best_params,
        best_epoch=best_epoch,
        history=history,
        optimizer=optimizer,
        next_epoch=max(start_epoch, end),
    )


def train_markov(
    trajectories: Array,
    params: Mapping[str, Array],
    model_config: ModelConfig,
    train_config: TrainConfig,
    **kwargs: Any,
) -> TrainResult:
    return train(
        trajectories,
        params,
        model_config,
        replace_strategy(train_config, Strategy.MARKOV),
        **kwargs,
    )


def train_recurrent(
    trajectories: Array,
    params: Mapping[str, Array],
    model_config: ModelConfig,
    train_config: TrainConfig,
    rollout: int | None = None,
    **kwargs: Any,
) -> TrainResult:
    config = replace_strategy(train_config, Strategy.RECURRENT)

    if rollout is not None:
        config = dataclasses.replace(config, rollout_steps=rollout)

    return train(trajectories, params, model_config, config, **kwargs)


def replace_strategy(config: TrainConfig, strategy: Strategy) -> TrainConfig:
    return dataclasses.replace(config, strategy=strategy)


def history_digest(history: Sequence[HistoryEntry]) -> list[dict[str, Any]]:
    return [
        {
            "epoch": entry.epoch,
            "lr": entry.lr,
            "train_loss": entry.train_loss,
            "valid_loss": entry.valid_loss,
        }
        for entry in history
    ]


def write_history(history: Iterable[HistoryEntry], history_file: Path) -> None:
    """
    Write the per-epoch history as CSV with columns epoch,lr,train_loss,valid_loss.
    """
    dataframe = polars.DataFrame(
        history_digest(list(history)),
        schema={
            "epoch": polars.Int64,
            "lr": polars.Float64,
            "train_loss": polars.Float64,
            "valid_loss": polars.Float64,
        },
    )
    atomic_write(history_file, dataframe.write_csv().encode())
