from pathlib import Path

import numpy as np
import polars
import pytest

from pefnn.errors import ConfigError, ModeOverflow, ShapeMismatch, ZeroReference
from pefnn.metrics import (
    l_rmse,
    model_predictor,
    momentum_loss,
    momentum_loss_per_channel,
    one_step_eval,
    relative_errors,
    rollout_eval,
    rollout_predictions,
    superres_eval,
    write_report,
)
from pefnn.network import Activation, ModelConfig, init_params
from pefnn.utils import read_sidecar


def persistence(state: np.ndarray, steps: int) -> np.ndarray:
    return np.stack([state] * steps)


def constant_trajectories(count: int = 3, length: int = 5) -> np.ndarray:
    rng = np.random.default_rng(0)
    first = rng.standard_normal((count, 1, 1, 6, 6))
    return np.repeat(first, length, axis=1)


def band_limited(grid: int, coefficients: np.ndarray) -> np.ndarray:
    """
    Σ a cos(2π(k·x)) + b sin(2π(k·x)) over the wavenumbers |k| ≤ 2, sampled on
    a grid × grid mesh of the unit square. `coefficients` is (..., 2, 5, 5).
    """
    points = np.arange(grid) / grid
    y, x = np.meshgrid(points, points, indexing="ij")
    field = np.zeros(coefficients.shape[:-3] + (grid, grid))

    for row, ky in enumerate(range(-2, 3)):
        for col, kx in enumerate(range(-2, 3)):
            phase = 2 * np.pi * (kx * x + ky * y)
            field += coefficients[..., 0, row, col, None, None] * np.cos(phase)
            field += coefficients[..., 1, row, col, None, None] * np.sin(phase)

    return field


class TestRelativeError:
    @staticmethod
    def test_exact_prediction() -> None:
        truth = np.ones((2, 1, 4, 4))

        assert l_rmse(truth, truth) == 0.0

    @staticmethod
    def test_scaled_prediction() -> None:
        truth = np.ones((2, 1, 4, 4))

        assert l_rmse(1.5 * truth, truth) == pytest.approx(0.5)

    @staticmethod
    def test_mean_over_samples() -> None:
        truth = np.ones((2, 1, 4, 4))
        preds = truth * np.array([1.1, 1.3])[:, None, None, None]

        assert relative_errors(preds, truth) == pytest.approx([0.1, 0.3])
        assert l_rmse(preds, truth) == pytest.approx(0.2)

    @staticmethod
    def test_zero_reference() -> None:
        with pytest.raises(ZeroReference):
            l_rmse(np.ones((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)))

    @staticmethod
    def test_shapes_must_match() -> None:
        with pytest.raises(ShapeMismatch):
            l_rmse(np.ones((1, 1, 4, 4)), np.ones((1, 2, 4, 4)))


class TestMomentumLoss:
    @staticmethod
    def test_constant_offset() -> None:
        truth = np.random.default_rng(0).standard_normal((3, 1, 8, 8))

        assert momentum_loss(truth + 0.25, truth) == pytest.approx(0.25)
        assert momentum_loss(truth - 0.25, truth) == pytest.approx(0.25)

    @staticmethod
    def test_channel_norm() -> None:
        truth = np.zeros((2, 2, 4, 4))
        offset = np.array([3.0, 4.0])[None, :, None, None]

        assert momentum_loss(truth + offset, truth) == pytest.approx(5.0)
        assert momentum_loss_per_channel(truth + offset, truth) == pytest.approx(
            [3.0, 4.0]
        )

    @staticmethod
    def test_zero_mean_error_is_invisible() -> None:
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((2, 1, 8, 8))
        error = rng.standard_normal((2, 1, 8, 8))
        error -= error.mean(axis=(-2, -1), keepdims=True)

        assert momentum_loss(truth + error, truth) == pytest.approx(0.0, abs=1e-15)
        assert l_rmse(truth + error, truth) > 0.1


class TestRollout:
    @staticmethod
    def test_persistence_on_steady_data() -> None:
        report = rollout_eval(persistence, constant_trajectories())

        assert report.l_rmse == 0.0
        assert report.l_m == 0.0
        assert [score.step for score in report.steps] == [1, 2, 3, 4]
        assert report.metadata["protocol"] == "rollout"

    @staticmethod
    def test_aggregate_is_trajectory_mean() -> None:
        fields = np.random.default_rng(2).standard_normal((4, 4, 1, 6, 6))

        report = rollout_eval(persistence, fields, steps=2, start=1, batch_size=3)

        assert report.trajectory_l_rmse.shape == (4,)
        assert report.l_rmse == pytest.approx(report.trajectory_l_rmse.mean())
        assert report.l_m == pytest.approx(report.trajectory_l_m.mean())
        assert report.final_l_m == report.steps[-1].l_m
        assert [score.step for score in report.steps] == [2, 3]

    @staticmethod
    def test_noisy_start_is_seeded() -> None:
        fields = constant_trajectories()

        first = rollout_eval(persistence, fields, noise_std=0.1, seed=3)
        second = rollout_eval(persistence, fields, noise_std=0.1, seed=3)

        assert first.l_rmse > 0
        assert first.l_rmse == second.l_rmse

    @staticmethod
    def test_input_noise_never_lowers_error() -> None:
        config = ModelConfig(
            layers=1, width=3, modes=2, dt=0.1, activation=Activation.NONE
        )
        params = init_params(config, np.random.default_rng(0))
        predictor = model_predictor(params, config)
        start = np.random.default_rng(7).standard_normal((3, 1, 1, 8, 8))
        fields = rollout_predictions(predictor, start, steps=4)

        clean = rollout_eval(predictor, fields).l_rmse

        for seed in range(20):
            small = rollout_eval(predictor, fields, noise_std=0.01, seed=seed).l_rmse
            large = rollout_eval(predictor, fields, noise_std=0.1, seed=seed).l_rmse
            assert clean <= small <= large

    @staticmethod
    def test_too_many_steps() -> None:
        with pytest.raises(ShapeMismatch):
            rollout_eval(persistence, constant_trajectories(length=3), steps=3)

        with pytest.raises(ShapeMismatch):
            rollout_eval(persistence, constant_trajectories(length=3), start=2)

    @staticmethod
    def test_predictions_include_initial_slice() -> None:
        fields = constant_trajectories(length=4)

        preds = rollout_predictions(persistence, fields, steps=3)

        assert np.array_equal(preds, fields)


def test_one_step_scores_every_slice() -> None:
    fields = np.random.default_rng(4).standard_normal((2, 3, 1, 6, 6))

    report = one_step_eval(persistence, fields, batch_size=3)
    expected = [
        np.linalg.norm(fields[i, t] - fields[i, t + 1])
        / np.linalg.norm(fields[i, t + 1])
        for i in range(2)
        for t in range(2)
    ]

    assert [score.step for score in report.steps] == [1, 2]
    assert report.steps[0].l_rmse == pytest.approx(np.mean(expected[0::2]))
    assert report.metadata["protocol"] == "one_step"


class TestSuperResolution:
    @staticmethod
    def test_block_must_fit() -> None:
        with pytest.raises(ModeOverflow):
            superres_eval(persistence, constant_trajectories(), modes=4, train_grid=16)

    @staticmethod
    def test_band_limited_fields_score_alike() -> None:
        config = ModelConfig(
            layers=2, width=3, modes=2, dt=0.1, activation=Activation.NONE
        )
        params = init_params(config, np.random.default_rng(0))
        predictor = model_predictor(params, config)
        coefficients = np.random.default_rng(5).standard_normal((3, 2, 1, 2, 5, 5))

        coarse = rollout_eval(predictor, band_limited(16, coefficients))
        fine = superres_eval(
            predictor, band_limited(32, coefficients), modes=2, train_grid=16
        )

        assert fine.l_rmse == pytest.approx(coarse.l_rmse, rel=1e-8)
        assert fine.metadata["grid"] == [32, 32]
        assert fine.metadata["train_grid"] == 16

    @staticmethod
    def test_coarser_grid_rejected() -> None:
        with pytest.raises(ConfigError):
            superres_eval(persistence, constant_trajectories(), modes=1, train_grid=8)

    @staticmethod
    def test_training_grid_matches_rollout() -> None:
        fields = np.random.default_rng(3).standard_normal((2, 4, 1, 6, 6))

        report = superres_eval(persistence, fields, modes=1, train_grid=6)

        assert report.l_rmse == rollout_eval(persistence, fields).l_rmse
        assert report.metadata["protocol"] == "superres"


def test_report_files(tmp_path: Path) -> None:
    fields = np.random.default_rng(6).standard_normal((2, 4, 1, 6, 6))
    report = rollout_eval(persistence, fields)
    path = tmp_path / "eval.csv"

    write_report(report, path, checkpoint="model.npz")
    frame = polars.read_csv(path)
    sidecar = read_sidecar(path)

    assert frame.columns == ["step", "l_rmse", "l_m"]
    assert frame["step"].to_list() == [1, 2, 3]
    assert sidecar is not None
    assert sidecar["l_rmse"] == pytest.approx(report.l_rmse)
    assert sidecar["checkpoint"] == "model.npz"
    assert len(sidecar["trajectory_l_rmse"]) == 2
