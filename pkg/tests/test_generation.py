import numpy as np

from pefnn.datasets import Trajectory
from pefnn.generation import generate, generate_swe, trajectory_seeds
from pefnn.shallow_water import SWEConfig


def noise(seed: np.random.SeedSequence) -> Trajectory:
    fields = np.random.default_rng(seed).standard_normal((3, 1, 4, 4))
    return Trajectory(fields, 1.0, 0.25, ("u",), {"first": float(fields[0, 0, 0, 0])})


def test_seeds_are_distinct_and_reproducible() -> None:
    first = [seed.generate_state(2).tolist() for seed in trajectory_seeds(1, 4)]
    again = [seed.generate_state(2).tolist() for seed in trajectory_seeds(1, 4)]

    assert first == again
    assert len({tuple(state) for state in first}) == 4


class TestGenerate:
    @staticmethod
    def test_independent_of_concurrency() -> None:
        serial = generate(noise, 6, seed=3, max_at_once=1)
        parallel = generate(noise, 6, seed=3, max_at_once=4)

        assert serial.shape == (6, 3, 1, 4, 4)
        assert np.array_equal(serial.fields, parallel.fields)
        assert serial.metadata == parallel.metadata

    @staticmethod
    def test_reports_every_trajectory() -> None:
        done: list[int] = []

        generate(noise, 5, seed=0, max_at_once=2, on_done=done.append)

        assert sorted(done) == [0, 1, 2, 3, 4]

    @staticmethod
    def test_seed_changes_data() -> None:
        first = generate(noise, 2, seed=0)
        second = generate(noise, 2, seed=1)

        assert not np.array_equal(first.fields, second.fields)


def test_shallow_water_dataset() -> None:
    config = SWEConfig(grid=16, n_records=5, seed=2)

    dataset = generate_swe(config, 2, max_at_once=2)
    again = generate_swe(config, 2, max_at_once=1)

    assert dataset.shape == (2, 5, 1, 16, 16)
    assert dataset.channels == ("h",)
    assert np.array_equal(dataset.fields, again.fields)
    radii = [entry["dam_radius"] for entry in dataset.metadata["trajectories"]]
    assert radii[0] != radii[1]
