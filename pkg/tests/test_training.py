import math
from pathlib import Path

import numpy as np
import polars
import pytest

from pefnn.errors import ConfigError, NonFinite, ShapeMismatch, ZeroReference
from pefnn.metrics import model_predictor, rollout_eval
from pefnn.network import Activation, ModelConfig, init_params
from pefnn.training import (
    HistoryEntry,
    OptimizerState,
    Strategy,
    TrainConfig,
    adam_update,
    clip_gradients,
    cosine_lr,
    markov_loss,
    markov_pairs,
    recurrent_loss,
    relative_l2_loss,
    train,
    train_markov,
    train_recurrent,
    write_history,
)


def small_model() -> ModelConfig:
    return ModelConfig(layers=2, width=3, modes=2, dt=0.1)


def trajectories(count: int = 4, length: int = 3, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((count, length, 1, 8, 8))


class TestSchedule:
    @staticmethod
    def test_cosine() -> None:
        assert cosine_lr(1e-3, 0, 100) == 1e-3
        assert cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)
        assert cosine_lr(1e-3, 100, 100) == pytest.approx(0.0, abs=1e-18)

    @staticmethod
    def test_no_epochs() -> None:
        assert cosine_lr(1e-3, 0, 0) == 1e-3


class TestAdam:
    @staticmethod
    def test_first_step_moves_by_lr() -> None:
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([0.5, -3.0])}
        config = TrainConfig(weight_decay=0.0)

        updated, state = adam_update(
            params, grads, OptimizerState.zeros(params), 0.1, config
        )

        assert updated["w"] == pytest.approx([0.9, -1.9], abs=1e-6)
        assert state.steps == 1

    @staticmethod
    def test_decoupled_weight_decay() -> None:
        params = {"w": np.array([2.0])}
        grads = {"w": np.array([0.0])}
        config = TrainConfig(weight_decay=0.5)

        updated, _ = adam_update(
            params, grads, OptimizerState.zeros(params), 0.1, config
        )

        assert updated["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    @staticmethod
    def test_clip() -> None:
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}

        clipped = clip_gradients(grads, 1.0)

        assert clipped["a"][0] == pytest.approx(0.6)
        assert clipped["b"][0] == pytest.approx(0.8)
        assert clip_gradients(grads, 10.0)["a"][0] == 3.0


class TestRelativeL2:
    @staticmethod
    def test_value() -> None:
        truth = np.ones((2, 1, 4, 4))

        assert relative_l2_loss(truth, truth)[0] == 0.0
        assert relative_l2_loss(1.5 * truth, truth)[0] == pytest.approx(0.5)

    @staticmethod
    def test_zero_reference() -> None:
        truth = np.ones((2, 1, 4, 4))
        truth[1] = 0.0

        with pytest.raises(ZeroReference):
            relative_l2_loss(np.ones_like(truth), truth)

    @staticmethod
    def test_shape_mismatch() -> None:
        with pytest.raises(ShapeMismatch):
            relative_l2_loss(np.ones((1, 1, 4, 4)), np.ones((1, 1, 4, 5)))


def test_config_validation() -> None:
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)

    with pytest.raises(ConfigError):
        TrainConfig(strategy="scheduled-sampling")  # type: ignore[arg-type]


def test_markov_pairs() -> None:
    pairs = markov_pairs(trajectories(count=2, length=3))

    assert pairs.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]

    with pytest.raises(ShapeMismatch):
        markov_pairs(trajectories(count=2, length=1))


def test_single_step_rollout_equals_markov_loss() -> None:
    model = small_model()
    params = init_params(model, np.random.default_rng(0))
    data = trajectories(length=2)

    markov, markov_grads = markov_loss(params, model, data[:, 0], data[:, 1])
    recurrent, recurrent_grads = recurrent_loss(params, model, data, 1)

    assert recurrent == pytest.approx(markov, rel=1e-12)
    for name, grad in markov_grads.items():
        assert np.allclose(recurrent_grads[name], grad, rtol=1e-10, atol=1e-14)


def test_rollout_longer_than_data() -> None:
    model = small_model()
    params = init_params(model, np.random.default_rng(0))

    with pytest.raises(ShapeMismatch):
        recurrent_loss(params, model, trajectories(length=3), 3)


class TestTrain:
    @staticmethod
    def test_zero_epochs_returns_initial_params() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))

        result = train(trajectories(), params, model, TrainConfig(epochs=0))

        assert result.history == []
        assert result.best_epoch is None
        assert result.next_epoch == 0
        for name, value in params.items():
            assert np.array_equal(result.params[name], value)

    @staticmethod
    def test_loss_decreases() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))
        data = trajectories(count=6)
        data[:, 1:] = 0.9 * data[:, :-1]
        config = TrainConfig(epochs=30, batch_size=4, lr=1e-2)

        result = train(data, params, model, config, valid=data[:2])

        assert len(result.history) == 30
        assert result.history[-1].train_loss < result.history[0].train_loss
        assert result.best_loss == min(entry.valid_loss for entry in result.history)

    @staticmethod
    def test_resume_is_bit_exact() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))
        data = trajectories(count=5)
        config = TrainConfig(epochs=4, batch_size=2, lr=1e-2)

        full = train(data, params, model, config)
        first = train(data, params, model, config, stop_epoch=2)
        second = train(
            data,
            first.params,
            model,
            config,
            optimizer=first.optimizer,
            start_epoch=first.next_epoch,
        )

        assert first.next_epoch == 2
        assert second.next_epoch == 4
        assert [entry.epoch for entry in second.history] == [2, 3]
        for name, value in full.params.items():
            assert np.array_equal(second.params[name], value)

    @staticmethod
    def test_markov_overrides_strategy() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))
        data = trajectories()
        config = TrainConfig(epochs=2, batch_size=2)
        recurrent = TrainConfig(epochs=2, batch_size=2, strategy=Strategy.RECURRENT)

        expected = train(data, params, model, config)
        result = train_markov(data, params, model, recurrent)

        assert result.history == expected.history

    @staticmethod
    def test_recurrent_strategy() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))
        config = TrainConfig(epochs=2, batch_size=2)

        result = train_recurrent(trajectories(length=4), params, model, config, 2)

        assert len(result.history) == 2
        assert math.isfinite(result.history[-1].train_loss)

    @staticmethod
    def test_non_finite_reports_epoch() -> None:
        model = small_model()
        params = init_params(model, np.random.default_rng(0))
        data = trajectories()
        data[2, 1] = np.nan
        config = TrainConfig(epochs=3, strategy=Strategy.MARKOV)

        with pytest.raises(NonFinite) as error:
            train(data, params, model, config)

        assert error.value.epoch == 0


def test_write_history(tmp_path: Path) -> None:
    history = [HistoryEntry(0, 1e-3, 0.5, None), HistoryEntry(1, 5e-4, 0.25, 0.3)]
    path = tmp_path / "history.csv"

    write_history(history, path)
    frame = polars.read_csv(path)

    assert frame.columns == ["epoch", "lr", "train_loss", "valid_loss"]
    assert frame["train_loss"].to_list() == [0.5, 0.25]
    assert frame["valid_loss"].to_list() == [None, 0.3]


@pytest.mark.slow
def test_recurrent_training_learns_quadratic_rollout() -> None:
    """
    u_{t+1} = u_t + 0.1 u_t², unrolled over five steps.
    """
    states = [np.random.default_rng(0).uniform(-1.0, 1.0, (64, 1, 8, 8))]
    for _ in range(5):
        states.append(states[-1] + 0.1 * states[-1] ** 2)

    data = np.stack(states, axis=1)
    model = ModelConfig(layers=2, width=4, modes=1, dt=1.0, activation=Activation.NONE)
    config = TrainConfig(epochs=400, batch_size=16, lr=1e-2, weight_decay=0.0)

    result = train_recurrent(
        data, init_params(model, np.random.default_rng(0)), model, config, rollout=5
    )
    report = rollout_eval(model_predictor(result.params, model), data, steps=5)

    assert report.steps[-1].l_rmse < 5e-2
