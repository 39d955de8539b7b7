from pathlib import Path

import numpy as np
import polars
import pytest

from pefnn.checkpoints import load_checkpoint
from pefnn.cli import last_checkpoint_path, main
from pefnn.config import load_run_config
from pefnn.datasets import read_dataset
from pefnn.network import init_params
from pefnn.utils import read_sidecar

CONFIG = """\
model:
  layers: 1
  width: 4
  modes: 2
  dt: 0.04
swe:
  grid: 16
  n_records: 6
data:
  count: 4
  max_at_once: 2
train:
  batch_size: 4
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """
    A directory holding run.yaml, a small shallow-water dataset swe.pefn and an
    untrained checkpoint model.npz.
    """
    directory = tmp_path_factory.mktemp("run")
    config = directory / "run.yaml"
    config.write_text(CONFIG)

    main(["gen-swe", "--config", str(config), "--out", str(directory / "swe.pefn")])
    main(
        [
            "train",
            "--config",
            str(config),
            "--dataset",
            str(directory / "swe.pefn"),
            "--out",
            str(directory / "model.npz"),
            "--epochs",
            "0",
        ]
    )
    return directory


def exit_code(argv: list[str]) -> object:
    with pytest.raises(SystemExit) as error:
        main(argv)
    return error.value.code


class TestGenerate:
    @staticmethod
    def test_dataset_shape(run: Path) -> None:
        dataset = read_dataset(run / "swe.pefn")

        assert dataset.shape == (4, 6, 1, 16, 16)
        assert dataset.metadata["command"] == "gen-swe"
        assert dataset.metadata["config"]["swe"]["grid"] == 16

    @staticmethod
    def test_count_override(run: Path, tmp_path: Path) -> None:
        out = tmp_path / "two.pefn"
        config = str(run / "run.yaml")

        main(["gen-swe", "--config", config, "--out", str(out), "--count", "2"])

        assert read_dataset(out).shape[0] == 2


class TestTrain:
    @staticmethod
    def test_zero_epochs_keeps_initial_params(run: Path) -> None:
        model = load_run_config(run / "run.yaml").model
        initial = init_params(model, np.random.default_rng(0))

        for path in (run / "model.npz", last_checkpoint_path(run / "model.npz")):
            checkpoint = load_checkpoint(path, expected=model)
            assert checkpoint.next_epoch == 0
            for name, value in initial.items():
                assert np.array_equal(checkpoint.params[name], value)

    @staticmethod
    def test_history_file(run: Path) -> None:
        history = polars.read_csv(run / "model.csv")

        assert history.columns == ["epoch", "lr", "train_loss", "valid_loss"]
        assert history.height == 0

    @staticmethod
    def test_metadata_records_grid(run: Path) -> None:
        metadata = load_checkpoint(run / "model.npz").metadata

        assert metadata["grid"] == [16, 16]
        assert metadata["dataset"] == str(run / "swe.pefn")

    @staticmethod
    def test_metadata_records_split(run: Path) -> None:
        metadata = load_checkpoint(run / "model.npz").metadata
        dataset = read_dataset(run / "swe.pefn")
        split = [metadata["split"][name] for name in ("train", "valid", "test")]

        assert [len(indices) for indices in split] == [3, 0, 1]
        assert sorted(sum(split, [])) == [0, 1, 2, 3]
        assert metadata["dataset_fingerprint"] == dataset.fingerprint()


class TestEvaluate:
    @staticmethod
    def test_rollout_report(run: Path, tmp_path: Path) -> None:
        out = tmp_path / "rollout.csv"

        main(
            [
                "rollout",
                "--checkpoint",
                str(run / "model.npz"),
                "--dataset",
                str(run / "swe.pefn"),
                "--out",
                str(out),
                "--steps",
                "3",
            ]
        )
        report = polars.read_csv(out)

        assert report.columns == ["step", "l_rmse", "l_m"]
        assert report["step"].to_list() == [1, 2, 3]

    @staticmethod
    def test_rollout_scores_held_out_trajectories(run: Path, tmp_path: Path) -> None:
        argv = ["rollout", "--checkpoint", str(run / "model.npz")]
        argv += ["--dataset", str(run / "swe.pefn")]

        main(argv + ["--out", str(tmp_path / "test.csv")])
        main(argv + ["--out", str(tmp_path / "all.csv"), "--split", "all"])
        held_out = read_sidecar(tmp_path / "test.csv")
        whole = read_sidecar(tmp_path / "all.csv")
        test = load_checkpoint(run / "model.npz").metadata["split"]["test"]

        assert held_out is not None and whole is not None
        assert held_out["split"] == "test"
        assert len(held_out["trajectory_l_rmse"]) == 1
        assert held_out["trajectory_l_rmse"] == pytest.approx(
            [whole["trajectory_l_rmse"][index] for index in test]
        )
        assert whole["split"] == "all"

    @staticmethod
    def test_dumped_rollout_is_self_consistent(run: Path, tmp_path: Path) -> None:
        dump = tmp_path / "predictions.pefn"
        out = tmp_path / "eval.csv"
        checkpoint = str(run / "model.npz")

        main(
            ["rollout", "--checkpoint", checkpoint, "--dataset", str(run / "swe.pefn")]
            + ["--out", str(tmp_path / "rollout.csv"), "--dump", str(dump)]
        )
        main(
            ["eval", "--checkpoint", checkpoint, "--dataset", str(dump)]
            + ["--out", str(out)]
        )
        sidecar = read_sidecar(out)

        assert read_dataset(dump).shape == (1, 6, 1, 16, 16)
        assert sidecar is not None
        assert sidecar["split"] == "all"
        assert sidecar["l_rmse"] == pytest.approx(0.0, abs=1e-12)

    @staticmethod
    def test_superres_uses_training_grid(run: Path, tmp_path: Path) -> None:
        config = tmp_path / "fine.yaml"
        config.write_text(CONFIG.replace("grid: 16", "grid: 32"))
        fine = tmp_path / "fine.pefn"
        out = tmp_path / "superres.csv"

        main(["gen-swe", "--config", str(config), "--out", str(fine), "--count", "1"])
        main(
            ["superres", "--checkpoint", str(run / "model.npz")]
            + ["--dataset", str(fine), "--out", str(out)]
        )
        sidecar = read_sidecar(out)

        assert sidecar is not None
        assert sidecar["train_grid"] == 16
        assert sidecar["grid"] == [32, 32]
        assert sidecar["protocol"] == "superres"
        assert sidecar["split"] == "all"


class TestExitCodes:
    @staticmethod
    def test_missing_dataset(run: Path, tmp_path: Path) -> None:
        argv = ["eval", "--checkpoint", str(run / "model.npz")]
        argv += ["--dataset", str(tmp_path / "missing.pefn")]
        argv += ["--out", str(tmp_path / "eval.csv")]

        assert exit_code(argv) == 5

    @staticmethod
    def test_unknown_config_key(tmp_path: Path) -> None:
        config = tmp_path / "run.yaml"
        config.write_text("model:\n  widht: 4\n")

        argv = ["gen-swe", "--config", str(config), "--out", str(tmp_path / "x")]

        assert exit_code(argv) == 2

    @staticmethod
    def test_corrupt_dataset(run: Path, tmp_path: Path) -> None:
        broken = tmp_path / "broken.pefn"
        broken.write_bytes((run / "swe.pefn").read_bytes()[:-20])

        argv = ["eval", "--checkpoint", str(run / "model.npz")]
        argv += ["--dataset", str(broken), "--out", str(tmp_path / "eval.csv")]

        assert exit_code(argv) == 3

    @staticmethod
    def test_empty_split(run: Path, tmp_path: Path) -> None:
        argv = ["eval", "--checkpoint", str(run / "model.npz")]
        argv += ["--dataset", str(run / "swe.pefn")]
        argv += ["--out", str(tmp_path / "eval.csv"), "--split", "valid"]

        assert exit_code(argv) == 2

    @staticmethod
    def test_resume_with_other_model(run: Path, tmp_path: Path) -> None:
        config = tmp_path / "wide.yaml"
        config.write_text(CONFIG.replace("width: 4", "width: 6"))

        argv = ["train", "--config", str(config)]
        argv += ["--dataset", str(run / "swe.pefn")]
        argv += ["--out", str(tmp_path / "model.npz")]
        argv += ["--resume", str(last_checkpoint_path(run / "model.npz"))]

        assert exit_code(argv) == 2


def test_gradcheck_command(tmp_path: Path) -> None:
    config = tmp_path / "check.yaml"
    config.write_text(
        "model:\n  layers: 2\n  width: 3\n  modes: 2\n"
        "  integrator: rk3\n  pad: 1\n  dt: 0.5\n"
        "gradcheck:\n  slots: 5\n  group_sizes: [1]\n"
    )

    main(["gradcheck", "--config", str(config)])
