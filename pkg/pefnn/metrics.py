"""
Evaluation metrics and harnesses.

L_RMSE is the mean over samples of ‖pred - truth‖₂ / ‖truth‖₂. The momentum loss
treats every cell as a unit mass: per sample it is the channel-wise norm of
Σ pred - Σ truth over the grid, divided by the cell count N = H · W, averaged over
samples.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import polars

from .errors import ConfigError, ShapeMismatch, ZeroReference
from .network import ModelConfig, RightHandSide, predict
from .spectral import check_modes
from .tape import Array
from .training import ZERO_REFERENCE_NORM
from .utils import atomic_write, write_sidecar

logger = logging.getLogger(__name__)

# (state (batch, channels, H, W), steps) -> (steps, batch, channels, H, W)
Predictor = Callable[[Array, int], Array]


def model_predictor(
    params: Mapping[str, Array], config: ModelConfig, rhs: RightHandSide | None = None
) -> Predictor:
    def run(state: Array, steps: int) -> Array:
        return predict(state, params, config, steps, rhs)

    return run


def check_shapes(preds: Array, truths: Array) -> None:
    if preds.shape != truths.shape:
        raise ShapeMismatch(f"Predictions {preds.shape} do not match {truths.shape}.")


def relative_errors(preds: Array, truths: Array) -> Array:
    """
    ‖pred - truth‖₂ / ‖truth‖₂ per sample along the first axis.
    """
    check_shapes(preds, truths)
    count = truths.shape[0]
    truth_norms = np.linalg.norm(truths.reshape(count, -1), axis=1)

    if (truth_norms < ZERO_REFERENCE_NORM).any():
        raise ZeroReference("A reference sample has zero norm.")

    return np.linalg.norm((preds - truths).reshape(count, -1), axis=1) / truth_norms


def l_rmse(preds: Array, truths: Array) -> float:
    return float(np.mean(relative_errors(preds, truths)))


def momentum_differences(preds: Array, truths: Array) -> Array:
    """
    (Σ pred - Σ truth) / N per sample and channel; the trailing two axes are the grid.
    """
    check_shapes(preds, truths)
    cells = preds.shape[-2] * preds.shape[-1]
    return np.asarray((preds - truths).sum(axis=(-2, -1)) / cells)


def momentum_errors(preds: Array, truths: Array) -> Array:
    """
    Momentum loss per sample, the channel axis being the one before the grid.
    """
    return np.asarray(np.linalg.norm(momentum_differences(preds, truths), axis=-1))


def momentum_loss(preds: Array, truths: Array) -> float:
    return float(np.mean(momentum_errors(preds, truths)))


def momentum_loss_per_channel(preds: Array, truths: Array) -> Array:
    differences = momentum_differences(preds, truths)
    return np.asarray(
        np.abs(differences).reshape(-1, differences.shape[-1]).mean(axis=0)
    )


@dataclass
class StepScore:
    step: int
    l_rmse: float
    l_m: float

    @staticmethod
    def tabulate(scores: Iterable["StepScore"]) -> Iterator[dict[str, float]]:
        for score in scores:
            yield {"step": score.step, "l_rmse": score.l_rmse, "l_m": score.l_m}


@dataclass
class EvalReport:
    """
    `trajectory_l_rmse[i]` is the relative L2 error over trajectory i's whole
    predicted rollout and `trajectory_l_m[i]` its mean per-step momentum loss. Step
    rows average the trajectories at each step.
    """

    trajectory_l_rmse: Array
    trajectory_l_m: Array
    steps: list[StepScore]
    momentum_per_channel: Array
    wall_clock: float
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def l_rmse(self) -> float:
        return float(np.mean(self.trajectory_l_rmse))

    @property
    def l_m(self) -> float:
        return float(np.mean(self.trajectory_l_m))

    @property
    def final_l_m(self) -> float:
        return self.steps[-1].l_m if self.steps else 0.0

    def summary(self) -> dict[str, Any]:
        return {
            "l_rmse": self.l_rmse,
            "l_m": self.l_m,
            "final_l_m": self.final_l_m,
            "momentum_per_channel": self.momentum_per_channel.tolist(),
            "trajectory_l_rmse": self.trajectory_l_rmse.tolist(),
            "trajectory_l_m": self.trajectory_l_m.tolist(),
            "wall_clock": self.wall_clock,
            **self.metadata,
        }


def score(
    preds: Array, truths: Array, first_step: int, wall_clock: float
) -> EvalReport:
    """
    Score (trajectories, steps, channels, H, W) predictions against their truths.
    """
    check_shapes(preds, truths)
    count, steps = truths.shape[:2]
    per_step = relative_errors(
        preds.reshape((-1,) + preds.shape[2:]), truths.reshape((-1,) + truths.shape[2:])
    ).reshape(count, steps)
    momentum = momentum_errors(preds, truths)

    return EvalReport(
        trajectory_l_rmse=relative_errors(preds, truths),
        trajectory_l_m=momentum.mean(axis=1),
        steps=[
            StepScore(
                step=first_step + index,
                l_rmse=float(per_step[:, index].mean()),
                l_m=float(momentum[:, index].mean()),
            )
            for index in range(steps)
        ],
        momentum_per_channel=momentum_loss_per_channel(preds, truths),
        wall_clock=wall_clock,
    )


def rollout_eval(
    predictor: Predictor,
    fields: Array,
    steps: int | None = None,
    start: int = 0,
    noise_std: float = 0.0,
    seed: int = 0,
    batch_size: int = 32,
) -> EvalReport:
    """
    Roll out autoregressively from slice `start` of every trajectory (fields are
    (trajectories, time, channels, H, W)) and score `steps` predicted slices. With
    `noise_std`, Gaussian noise is added to the initial slices first.
    """
    available = fields.shape[1] - 1 - start
    steps = available if steps is None else steps

    if start < 0 or steps < 1 or steps > available:
        raise ShapeMismatch(
            f"Rollout of {steps} steps from slice {start} needs "
            f"{start + (steps or 0) + 1} slices, got {fields.shape[1]}."
        )

    initial = fields[:, start]
    if noise_std > 0:
        initial = initial + np.random.default_rng(seed).normal(
            0.0, noise_std, initial.shape
        )

    began = time.perf_counter()
    preds = np.concatenate(
        [
            np.swapaxes(predictor(initial[index : index + batch_size], steps), 0, 1)
            for index in range(0, len(initial), batch_size)
        ]
    )
    elapsed = time.perf_counter() - began

    report = score(preds, fields[:, start + 1 : start + 1 + steps], start + 1, elapsed)
    report.metadata.update(
        {"protocol": "rollout", "start": start, "noise_std": noise_std, "seed": seed}
    )
    logger.info(f"Rollout of {steps} steps: L_RMSE={report.l_rmse:.6e}")
    return report


def rollout_predictions(
    predictor: Predictor, fields: Array, steps: int, start: int = 0
) -> Array:
    """
    Rollout predictions shaped like `fields` (trajectories, steps + 1, ...), the
    first slice being the true initial state.
    """
    initial = fields[:, start]
    preds = np.swapaxes(predictor(initial, steps), 0, 1)
    return np.concatenate([initial[:, None], preds], axis=1)


def one_step_eval(
    predictor: Predictor, fields: Array, batch_size: int = 32
) -> EvalReport:
    """
    Predict every slice from its true predecessor and score all of them.
    """
    count, length = fields.shape[:2]

    if length < 2:
        raise ShapeMismatch("One-step evaluation needs trajectories of 2+ slices.")

    inputs = fields[:, :-1].reshape((-1,) + fields.shape[2:])
    began = time.perf_counter()
    preds = np.concatenate(
        [
            predictor(inputs[index : index + batch_size], 1)[0]
            for index in range(0, len(inputs), batch_size)
        ]
    )
    elapsed = time.perf_counter() - began

    report = score(
        preds.reshape((count, length - 1) + fields.shape[2:]), fields[:, 1:], 1, elapsed
    )
    report.metadata["protocol"] = "one_step"
    logger.info(f"One-step evaluation: L_RMSE={report.l_rmse:.6e}")
    return report


def superres_eval(
    predictor: Predictor,
    fields: Array,
    modes: int,
    train_grid: int,
    steps: int | None = None,
    start: int = 0,
) -> EvalReport:
    """
    `rollout_eval` of a model trained on a `train_grid` grid, run unchanged on the
    grid of `fields`.

    The evaluation grid must be at least as fine as the training grid: a coarser
    grid raises `ConfigError`, an equal one reduces to `rollout_eval`.
    """
    height, width = fields.shape[-2:]
    check_modes(train_grid, train_grid, modes)
    check_modes(height, width, modes)

    if min(height, width) < train_grid:
        raise ConfigError(
            f"Super-resolution grid {height}x{width} is coarser than the training "
            f"grid {train_grid}."
        )

    report = rollout_eval(predictor, fields, steps, start)
    report.metadata.update(
        {"protocol": "superres", "train_grid": train_grid, "grid": [height, width]}
    )
    return report


def write_report(report: EvalReport, report_file: Path, **metadata: Any) -> None:
    """
    Write the per-step CSV (columns step,l_rmse,l_m) and a sidecar holding the
    aggregates, per-trajectory scores and `metadata`.
    """
    dataframe = polars.DataFrame(
        list(StepScore.tabulate(report.steps)),
        schema={"step": polars.Int64, "l_rmse": polars.Float64, "l_m": polars.Float64},
    )
    atomic_write(report_file, dataframe.write_csv().encode())
    write_sidecar(report_file, {**report.summary(), **metadata})
    logger.info(f"Wrote evaluation report to {report_file}.")
