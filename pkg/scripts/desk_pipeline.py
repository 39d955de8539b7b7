#!/usr/bin/env python

"""
End-to-end shallow-water run on one machine: generate a training dataset and a
finer super-resolution dataset, train, then score rollouts on both grids. The
training-grid rollout scores the held-out test split; the fine dataset is solved
from its own seed so none of its dam breaks were seen in training.

Outputs land in `--workdir`:

    swe.pefn, swe_fine.pefn     datasets (+ .json sidecars)
    model.npz, model.last.npz   best and resumable checkpoints
    model.csv                   per-epoch history
    rollout.csv, superres.csv   per-step reports (+ .json sidecars)

Usage: `desk_pipeline.py --help`
"""

import argparse
import dataclasses
from pathlib import Path

import yaml

from pefnn.cli import main as pefnn
from pefnn.config import config_to_dict, load_run_config


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser()

    parser.add_argument(
        "--config",
        type=Path,
        required=True,
        help="YAML run configuration (swe, data, model and train sections)",
    )
    parser.add_argument(
        "--workdir",
        type=Path,
        default=Path("desk_run"),
        help="Output folder",
    )
    parser.add_argument(
        "--upscale",
        type=int,
        default=2,
        help="Grid factor of the super-resolution dataset",
    )
    parser.add_argument(
        "--fine-count",
        type=int,
        default=4,
        help="Number of super-resolution trajectories",
    )
    parser.add_argument(
        "--fine-seed",
        type=int,
        default=None,
        help="Seed of the super-resolution dataset (defaults to swe.seed + 1)",
    )

    return parser.parse_args()


def main(args: argparse.Namespace) -> None:
    workdir = args.workdir
    workdir.mkdir(parents=True, exist_ok=True)

    run = load_run_config(args.config)
    fine_seed = run.swe.seed + 1 if args.fine_seed is None else args.fine_seed
    fine = dataclasses.replace(
        run,
        swe=dataclasses.replace(
            run.swe, grid=run.swe.grid * args.upscale, seed=fine_seed
        ),
        data=dataclasses.replace(run.data, count=args.fine_count),
    )
    fine_config = workdir / "fine.yaml"
    fine_config.write_text(yaml.safe_dump(config_to_dict(fine)))

    config = str(args.config)
    checkpoint = str(workdir / "model.npz")
    dataset = str(workdir / "swe.pefn")
    fine_dataset = str(workdir / "swe_fine.pefn")

    pefnn(["gen-swe", "--config", config, "--out", dataset])
    pefnn(["gen-swe", "--config", str(fine_config), "--out", fine_dataset])
    pefnn(["train", "--config", config, "--dataset", dataset, "--out", checkpoint])
    pefnn(
        ["rollout", "--checkpoint", checkpoint, "--dataset", dataset]
        + ["--out", str(workdir / "rollout.csv")]
    )
    pefnn(
        ["superres", "--checkpoint", checkpoint, "--dataset", fine_dataset]
        + ["--out", str(workdir / "superres.csv")]
    )


if __name__ == "__main__":
    main(parse_args())
