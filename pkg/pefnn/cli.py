import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .checkpoints import Checkpoint
    from .config import RunConfig
    from .datasets import Dataset

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
SPLITS = ("all", "train", "valid", "test")


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="pefnn")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=LOG_LEVELS,
        help="Logging level",
    )
    parser.set_defaults(command=lambda _: parser.print_help())
    subparsers = parser.add_subparsers()
    add_generate_args(subparsers.add_parser("gen-ns"), "ns")
    add_generate_args(subparsers.add_parser("gen-swe"), "swe")
    add_generate_args(subparsers.add_parser("gen-flood"), "flood")
    add_train_args(subparsers.add_parser("train"))
    add_eval_args(subparsers.add_parser("eval"))
    add_rollout_args(subparsers.add_parser("rollout"))
    add_superres_args(subparsers.add_parser("superres"))
    add_gradcheck_args(subparsers.add_parser("gradcheck"))
    return parser.parse_args(argv)


def configure_logging(level: str) -> None:
    from rich.logging import RichHandler

    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=False)],
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> None:
    from .errors import IOFailure, PeFNNError

    args = parse_args(argv)
    configure_logging(args.log_level)

    try:
        args.command(args)
    except PeFNNError as error:
        logger.error(str(error))
        sys.exit(error.exit_code)
    except OSError as error:
        logger.error(f"I/O failure: {error}")
        sys.exit(IOFailure.exit_code)


def add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="YAML run configuration (defaults for every missing section)",
    )


def read_config(args: argparse.Namespace) -> "RunConfig":
    from .config import RunConfig, load_run_config

    return RunConfig() if args.config is None else load_run_config(args.config)


def add_generate_args(parser: argparse.ArgumentParser, solver: str) -> None:
    add_config_arg(parser)
    parser.add_argument(
        "--out",
        type=Path,
        required=True,
        help="Output dataset file",
    )
    parser.add_argument(
        "--count",
        type=int,
        default=None,
        help="Number of trajectories (overrides data.count)",
    )
    parser.set_defaults(command=generate, solver=solver)


def generate(args: argparse.Namespace) -> None:
    import dataclasses

    import rich
    import rich.progress

    from . import generation
    from .config import config_to_dict
    from .datasets import write_dataset

    run = read_config(args)
    if args.count is not None:
        run = dataclasses.replace(
            run, data=dataclasses.replace(run.data, count=args.count)
        )
    count = run.data.count
    max_at_once = run.data.max_at_once

    with rich.progress.Progress() as progress:
        task = progress.add_task(f"Generating {args.solver}...", total=count)

        def on_done(_: int) -> None:
            progress.advance(task)

        if args.solver == "ns":
            dataset = generation.generate_ns(run.ns, count, max_at_once, on_done)
        elif args.solver == "swe":
            dataset = generation.generate_swe(run.swe, count, max_at_once, on_done)
        else:
            dataset = generation.generate_flood(run.flood, count, max_at_once, on_done)

    if run.data.window is not None:
        dataset = dataset.window(run.data.window, run.data.stride)

    write_dataset(
        dataset,
        args.out,
        run.data.dtype,
        metadata={"command": f"gen-{args.solver}", "config": config_to_dict(run)},
    )
    trajectories, length, channels, height, width = dataset.shape
    rich.print(
        f"{trajectories} trajectories, {channels} channel(s) on a {height}x{width} "
        f"grid, horizon {(length - 1) * dataset.dt_record:g} "
        f"({length} slices every {dataset.dt_record:g})"
    )


def add_train_args(parser: argparse.ArgumentParser) -> None:
    add_config_arg(parser)
    parser.add_argument(
        "--dataset",
        type=Path,
        required=True,
        help="Training dataset file",
    )
    parser.add_argument(
        "--out",
        type=Path,
        required=True,
        help="Output checkpoint of the best validation epoch",
    )
    parser.add_argument(
        "--history",
        type=Path,
        default=None,
        help="Output CSV of per-epoch losses (defaults to the checkpoint name .csv)",
    )
    parser.add_argument(
        "--resume",
        type=Path,
        default=None,
        help="Resumable checkpoint to continue from (the `.last` checkpoint)",
    )
    parser.add_argument(
        "--epochs",
        type=int,
        default=None,
        help="Epoch count of the schedule (overrides train.epochs)",
    )
    parser.add_argument(
        "--until",
        type=int,
        default=None,
        help="Stop before this epoch, keeping the schedule of --epochs",
    )
    parser.add_argument(
        "--strategy",
        choices=("markov", "recurrent"),
        default=None,
        help="Training strategy (overrides train.strategy)",
    )
    parser.set_defaults(command=train)


def last_checkpoint_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.last{path.suffix}")


def train(args: argparse.Namespace) -> None:
    import dataclasses

    import numpy as np
    import rich.progress

    from . import training
    from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
    from .config import config_to_dict
    from .datasets import read_dataset
    from .errors import ShapeMismatch
    from .network import count_parameters, init_params

    run = read_config(args)
    overrides: dict[str, Any] = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    run = dataclasses.replace(run, train=dataclasses.replace(run.train, **overrides))
    model, train_config = run.model, run.train

    dataset = read_dataset(args.dataset)
    if dataset.shape[2] != model.in_channels:
        raise ShapeMismatch(
            f"Dataset has {dataset.shape[2]} channels, the model expects "
            f"{model.in_channels}."
        )

    split = dataset.split_indices(
        run.data.train_fraction, run.data.valid_fraction, run.data.seed
    )
    train_set, valid_set, test_set = (dataset.subset(indices) for indices in split)
    logger.info(
        f"Training {count_parameters(model)} parameters on {len(train_set)} "
        f"trajectories ({len(valid_set)} validation, {len(test_set)} test)."
    )

    history: list[dict[str, Any]] = []
    previous_best: float | None = None
    resumed = None

    if args.resume is not None:
        resumed = load_checkpoint(args.resume, expected=model)
        params, optimizer, start_epoch = (
            resumed.params,
            resumed.optimizer,
            resumed.next_epoch,
        )
        history = list(resumed.history)
        previous_best = resumed.metadata.get("best_loss")

        if optimizer is None:
            logger.warning("Resuming without optimizer state; moments restart at 0.")
    else:
        params = init_params(model, np.random.default_rng(train_config.seed))
        optimizer, start_epoch = None, 0

    end = train_config.epochs if args.until is None else args.until
    with rich.progress.Progress() as progress:
        task = progress.add_task(
            "Training...", total=max(min(end, train_config.epochs) - start_epoch, 0)
        )
        result = training.train(
            train_set.fields,
            params,
            model,
            train_config,
            valid=valid_set.fields if len(valid_set) else None,
            optimizer=optimizer,
            start_epoch=start_epoch,
            stop_epoch=args.until,
            on_epoch=lambda _: progress.advance(task),
        )

    history += training.history_digest(result.history)
    improved = result.best_loss is not None and (
        previous_best is None or result.best_loss < previous_best
    )
    best_loss = result.best_loss if improved else previous_best
    best_epoch = result.best_epoch if improved else None
    metadata = {
        "command": "train",
        "config": config_to_dict(run),
        "dataset": str(args.dataset),
        "grid": list(dataset.shape[3:]),
        "dataset_fingerprint": dataset.fingerprint(),
        "split": {
            name: indices.tolist() for name, indices in zip(SPLITS[1:], split)
        },
        "parameters": count_parameters(model),
        "best_loss": best_loss,
    }

    if resumed is not None and best_epoch is None:
        best_epoch = resumed.metadata.get("best_epoch")

    metadata["best_epoch"] = best_epoch
    save_checkpoint(
        Checkpoint(
            model, result.params, result.optimizer, result.next_epoch, history, metadata
        ),
        last_checkpoint_path(args.out),
    )

    if improved or resumed is None or not args.out.exists():
        best_params = (
            result.best_params if improved or resumed is None else result.params
        )
        save_checkpoint(
            Checkpoint(model, best_params, None, result.next_epoch, history, metadata),
            args.out,
        )

    training.write_history(
        (training.HistoryEntry(**entry) for entry in history),
        args.history or args.out.with_suffix(".csv"),
    )
    logger.info(f"Best epoch {best_epoch} with loss {best_loss}.")


def add_checkpoint_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--checkpoint",
        type=Path,
        required=True,
        help="Model checkpoint",
    )
    parser.add_argument(
        "--dataset",
        type=Path,
        required=True,
        help="Ground-truth dataset file",
    )
    parser.add_argument(
        "--out",
        type=Path,
        required=True,
        help="Output report CSV (step,l_rmse,l_m)",
    )
    parser.add_argument(
        "--split",
        choices=SPLITS,
        default="test",
        help="Trajectories to score: a split recorded by `train`, or all of them",
    )


def select_split(
    dataset: "Dataset", checkpoint: "Checkpoint", split: str
) -> tuple["Dataset", str]:
    """
    The trajectories of `split` as recorded when the checkpoint was trained. A
    dataset other than the training dataset, or a checkpoint without a recorded
    split, is scored whole.
    """
    from .errors import ConfigError

    if split == "all":
        return dataset, "all"

    recorded = checkpoint.metadata.get("split")

    if (
        recorded is None
        or checkpoint.metadata.get("dataset_fingerprint") != dataset.fingerprint()
    ):
        logger.info("Not the training dataset of the checkpoint; scoring all of it.")
        return dataset, "all"

    if not recorded[split]:
        raise ConfigError(
            f"The {split} split of the training dataset is empty; pass another --split."
        )

    logger.info(f"Scoring the {len(recorded[split])} {split} trajectories.")
    return dataset.subset(recorded[split]), split


def add_rollout_range_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--steps",
        type=int,
        default=None,
        help="Rollout steps (defaults to the rest of each trajectory)",
    )
    parser.add_argument(
        "--start",
        type=int,
        default=0,
        help="Slice to start the rollout from",
    )


def add_eval_args(parser: argparse.ArgumentParser) -> None:
    add_checkpoint_args(parser)
    parser.set_defaults(command=evaluate)


def evaluate(args: argparse.Namespace) -> None:
    from . import metrics
    from .checkpoints import load_checkpoint
    from .datasets import read_dataset

    checkpoint = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    dataset, split = select_split(dataset, checkpoint, args.split)
    predictor = metrics.model_predictor(checkpoint.params, checkpoint.model_config)
    report = metrics.one_step_eval(predictor, dataset.fields)
    metrics.write_report(
        report,
        args.out,
        command="eval",
        checkpoint=str(args.checkpoint),
        dataset=str(args.dataset),
        split=split,
    )


def add_rollout_args(parser: argparse.ArgumentParser) -> None:
    add_checkpoint_args(parser)
    add_rollout_range_args(parser)
    parser.add_argument(
        "--noise-std",
        type=float,
        default=0.0,
        help="Standard deviation of Gaussian noise added to the initial slice",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Seed of the input noise",
    )
    parser.add_argument(
        "--dump",
        type=Path,
        default=None,
        help="Also write the predicted trajectories as a dataset file",
    )
    parser.set_defaults(command=rollout)


def rollout(args: argparse.Namespace) -> None:
    import dataclasses

    from . import metrics
    from .checkpoints import load_checkpoint
    from .datasets import read_dataset, write_dataset

    checkpoint = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    dataset, split = select_split(dataset, checkpoint, args.split)
    predictor = metrics.model_predictor(checkpoint.params, checkpoint.model_config)
    report = metrics.rollout_eval(
        predictor,
        dataset.fields,
        steps=args.steps,
        start=args.start,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    metrics.write_report(
        report,
        args.out,
        command="rollout",
        checkpoint=str(args.checkpoint),
        dataset=str(args.dataset),
        split=split,
    )

    if args.dump is not None:
        steps = report.steps[-1].step - args.start
        predictions = metrics.rollout_predictions(
            predictor, dataset.fields, steps, args.start
        )
        write_dataset(
            dataclasses.replace(
                dataset,
                fields=predictions,
                metadata={"command": "rollout", "checkpoint": str(args.checkpoint)},
            ),
            args.dump,
            dtype="f64",
        )


def add_superres_args(parser: argparse.ArgumentParser) -> None:
    add_checkpoint_args(parser)
    add_rollout_range_args(parser)
    parser.add_argument(
        "--train-grid",
        type=int,
        default=None,
        help="Grid size the model was trained on (defaults to the checkpoint's)",
    )
    parser.set_defaults(command=superres)


def superres(args: argparse.Namespace) -> None:
    from . import metrics
    from .checkpoints import load_checkpoint
    from .datasets import read_dataset
    from .errors import ConfigError

    checkpoint = load_checkpoint(args.checkpoint)
    train_grid = args.train_grid

    if train_grid is None:
        grid = checkpoint.metadata.get("grid")
        if not grid:
            raise ConfigError(
                "The checkpoint does not record its training grid; pass --train-grid."
            )
        train_grid = min(grid)

    dataset = read_dataset(args.dataset)
    dataset, split = select_split(dataset, checkpoint, args.split)
    predictor = metrics.model_predictor(checkpoint.params, checkpoint.model_config)
    report = metrics.superres_eval(
        predictor,
        dataset.fields,
        checkpoint.model_config.modes,
        train_grid,
        steps=args.steps,
        start=args.start,
    )
    metrics.write_report(
        report,
        args.out,
        command="superres",
        checkpoint=str(args.checkpoint),
        dataset=str(args.dataset),
        split=split,
    )


def add_gradcheck_args(parser: argparse.ArgumentParser) -> None:
    add_config_arg(parser)
    parser.set_defaults(command=gradcheck)


def gradcheck(args: argparse.Namespace) -> None:
    import rich
    from rich.table import Table

    from .gradcheck import gradcheck as run_gradcheck

    run = read_config(args)
    report = run_gradcheck(run.model, run.gradcheck)

    table = Table(title="Gradient check")
    for column in ("Kernel mode", "Group size", "Loss path", "Slots", "Worst error"):
        table.add_column(column)
    for result in report.results:
        table.add_row(
            result.kernel_mode.value,
            str(result.group_size),
            result.path.value,
            str(result.slots),
            f"{result.worst_error:.3e}",
        )
    rich.print(table)

    for kernel_mode, worst in report.by_mode().items():
        rich.print(f"{kernel_mode.value}: worst relative error {worst:.3e}")

    rich.print(
        f"{'PASS' if report.passed else 'FAIL'}: worst relative error "
        f"{report.worst_error:.3e} (tolerance {report.tolerance:.1e})"
    )
    report.raise_for_failure()
