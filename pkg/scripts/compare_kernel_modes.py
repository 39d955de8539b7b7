#!/usr/bin/env python

"""
Train one model per kernel tying at a matched parameter budget on the same dataset
and compare their rollouts. The channel width of every variant is chosen so its
parameter count comes closest to the budget of the reference variant.

Usage: `compare_kernel_modes.py --help`
"""

import argparse
import dataclasses
import logging
from pathlib import Path

import numpy as np
import polars
import rich
from rich.logging import RichHandler
from rich.table import Table

from pefnn.config import load_run_config
from pefnn.datasets import read_dataset
from pefnn.kernels import KernelMode
from pefnn.metrics import model_predictor, rollout_eval
from pefnn.network import ModelConfig, count_parameters, init_params
from pefnn.training import train

logger = logging.getLogger(__name__)

VARIANTS = (
    (KernelMode.DENSE, 1),
    (KernelMode.SINGLE_ROTATION, 1),
    (KernelMode.MULTIPLE_ROTATION, 1),
    (KernelMode.MULTIPLE_ROTATION, 4),
)


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser()

    parser.add_argument(
        "--config",
        type=Path,
        required=True,
        help="YAML run configuration; its model is the reference variant",
    )
    parser.add_argument(
        "--dataset",
        type=Path,
        required=True,
        help="Dataset file to train and evaluate on",
    )
    parser.add_argument(
        "--out",
        type=Path,
        default=Path("kernel_modes.csv"),
        help="Output CSV, one row per variant",
    )
    parser.add_argument(
        "--max-width",
        type=int,
        default=128,
        help="Largest channel width tried when matching the budget",
    )

    return parser.parse_args()


def matched_width(config: ModelConfig, budget: int, max_width: int) -> ModelConfig:
    """
    The variant of `config` whose channel width gives the parameter count closest
    to `budget`.
    """
    candidates = (
        dataclasses.replace(config, width=width) for width in range(1, max_width + 1)
    )
    return min(
        candidates, key=lambda candidate: abs(count_parameters(candidate) - budget)
    )


def cell(value: object) -> str:
    return f"{value:.4g}" if isinstance(value, float) else str(value)


def main(args: argparse.Namespace) -> None:
    run = load_run_config(args.config)
    dataset = read_dataset(args.dataset)
    train_set, valid_set, test_set = dataset.split(
        run.data.train_fraction, run.data.valid_fraction, run.data.seed
    )
    held_out = test_set if len(test_set) else valid_set
    budget = count_parameters(run.model)
    rows: list[dict[str, object]] = []

    for kernel_mode, group_size in VARIANTS:
        model = matched_width(
            dataclasses.replace(
                run.model, kernel_mode=kernel_mode, group_size=group_size
            ),
            budget,
            args.max_width,
        )
        logger.info(
            f"{kernel_mode.value} (group {group_size}): width {model.width}, "
            f"{count_parameters(model)} parameters."
        )
        result = train(
            train_set.fields,
            init_params(model, np.random.default_rng(run.train.seed)),
            model,
            run.train,
            valid=valid_set.fields if len(valid_set) else None,
        )
        predictor = model_predictor(result.best_params, model)
        report = rollout_eval(predictor, held_out.fields)
        rows.append(
            {
                "kernel_mode": kernel_mode.value,
                "group_size": group_size,
                "width": model.width,
                "parameters": count_parameters(model),
                "best_loss": result.best_loss,
                "l_rmse": report.l_rmse,
                "l_m": report.l_m,
                "final_l_m": report.final_l_m,
            }
        )

    dataframe = polars.DataFrame(rows)
    dataframe.write_csv(args.out)

    table = Table(title=f"Kernel modes at ~{budget} parameters")
    for column in dataframe.columns:
        table.add_column(column)
    for row in dataframe.iter_rows():
        table.add_row(*(cell(value) for value in row))
    rich.print(table)


if __name__ == "__main__":
    logging.basicConfig(
        level="INFO", format="%(message)s", datefmt="[%X]", handlers=[RichHandler()]
    )
    main(parse_args())
