"""
Concurrent trajectory generation. Every trajectory gets its own child seed spawned
from the run seed, so a dataset does not depend on how many run at once or in which
order they finish.
"""

from __future__ import annotations

import asyncio
import functools
import logging
from collections.abc import Callable, Sequence

import aiometer
import numpy as np

from .datasets import Dataset, Trajectory
from .flood import FloodScenario, flood_solve
from .navier_stokes import NSConfig, grf_sample, ns_solve
from .shallow_water import SWEConfig, swe_dambreak_solve

logger = logging.getLogger(__name__)

Solve = Callable[[np.random.SeedSequence], Trajectory]
OnDone = Callable[[int], None]


def trajectory_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def solve_ns(config: NSConfig, seed: np.random.SeedSequence) -> Trajectory:
    rng = np.random.default_rng(seed)
    return ns_solve(grf_sample(config, rng)[0], config)


def solve_swe(config: SWEConfig, seed: np.random.SeedSequence) -> Trajectory:
    return swe_dambreak_solve(config, np.random.default_rng(seed))


def solve_flood(scenario: FloodScenario, seed: np.random.SeedSequence) -> Trajectory:
    (dem_seed,) = seed.generate_state(1)
    trajectory = flood_solve(scenario.build(int(dem_seed)))
    trajectory.metadata["dem_seed"] = int(dem_seed)
    return trajectory


async def generate_async(
    solve: Solve,
    seeds: Sequence[np.random.SeedSequence],
    max_at_once: int = 4,
    on_done: OnDone | None = None,
) -> list[Trajectory]:
    async def run(index: int) -> tuple[int, Trajectory]:
        trajectory = await asyncio.to_thread(solve, seeds[index])
        return index, trajectory

    trajectories: dict[int, Trajectory] = {}

    async with aiometer.amap(
        run, range(len(seeds)), max_at_once=max_at_once
    ) as results:
        async for index, trajectory in results:
            trajectories[index] = trajectory
            logger.debug(f"Trajectory {index} finished.")

            if on_done is not None:
                on_done(index)

    return [trajectories[index] for index in range(len(seeds))]


def generate(
    solve: Solve,
    count: int,
    seed: int,
    max_at_once: int = 4,
    on_done: OnDone | None = None,
) -> Dataset:
    """
    Run `count` independent solves, at most `max_at_once` concurrently, and stack them
    into a dataset in seed order.
    """
    seeds = trajectory_seeds(seed, count)
    trajectories = asyncio.run(generate_async(solve, seeds, max_at_once, on_done))
    dataset = Dataset.from_trajectories(trajectories)
    logger.info(f"Generated {count} trajectories of shape {dataset.shape[1:]}.")
    return dataset


def generate_ns(
    config: NSConfig,
    count: int,
    max_at_once: int = 4,
    on_done: OnDone | None = None,
) -> Dataset:
    return generate(
        functools.partial(solve_ns, config), count, config.seed, max_at_once, on_done
    )


def generate_swe(
    config: SWEConfig,
    count: int,
    max_at_once: int = 4,
    on_done: OnDone | None = None,
) -> Dataset:
    return generate(
        functools.partial(solve_swe, config), count, config.seed, max_at_once, on_done
    )


def generate_flood(
    scenario: FloodScenario,
    count: int,
    max_at_once: int = 4,
    on_done: OnDone | None = None,
) -> Dataset:
    return generate(
        functools.partial(solve_flood, scenario),
        count,
        scenario.seed,
        max_at_once,
        on_done,
    )
