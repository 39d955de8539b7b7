"""
YAML run configuration.

    seed: 0              # default seed of every section that does not set its own
    model: {...}         # ModelConfig
    train: {...}         # TrainConfig
    data: {...}          # DataConfig
    ns: {...}            # NSConfig
    swe: {...}           # SWEConfig
    flood: {...}         # FloodScenario
    gradcheck: {...}     # GradcheckConfig

Every section is optional and falls back to its defaults. Unknown sections and keys
are errors.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

import yaml

from .datasets import DTYPE_CODES
from .errors import ConfigError, IOFailure, PeFNNError
from .flood import FloodScenario
from .gradcheck import GradcheckConfig
from .navier_stokes import NSConfig
from .network import ModelConfig
from .shallow_water import SWEConfig
from .training import TrainConfig
from .utils import closest_match

Section = TypeVar("Section")


@dataclass(frozen=True)
class DataConfig:
    """
    Dataset generation and splitting. `window`/`stride` cut long trajectories into
    samples of `window` slices after generation.
    """

    count: int = 8
    train_fraction: float = 0.8
    valid_fraction: float = 0.1
    window: int | None = None
    stride: int | None = None
    dtype: str = "f32"
    max_at_once: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigError(
                f"Dataset needs at least one trajectory, got {self.count}."
            )
        if self.dtype not in DTYPE_CODES:
            raise ConfigError(
                f"Unknown dataset dtype {self.dtype!r}, expected one of "
                f"{sorted(DTYPE_CODES)}."
            )
        if self.max_at_once < 1:
            raise ConfigError("max_at_once must be positive.")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ns: NSConfig = field(default_factory=NSConfig)
    swe: SWEConfig = field(default_factory=SWEConfig)
    flood: FloodScenario = field(default_factory=FloodScenario)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    seed: int | None = None


SECTIONS: dict[str, type[Any]] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "ns": NSConfig,
    "swe": SWEConfig,
    "flood": FloodScenario,
    "gradcheck": GradcheckConfig,
}


def unknown_key(key: str, choices: list[str], where: str) -> ConfigError:
    suggestion = closest_match(key, choices)
    hint = f" Did you mean {suggestion!r}?" if suggestion else ""
    return ConfigError(f"Unknown key {key!r} in {where}.{hint}")


def coerce(value: Any, annotation: str) -> Any:
    """
    YAML reads `1e-3` as a string; numbers for float fields are converted.
    """
    if "float" in annotation and isinstance(value, (str, int)):
        if isinstance(value, bool):
            return value
        try:
            return float(value)
        except ValueError:
            return value
    return value


def from_mapping(
    cls: type[Section],
    values: Mapping[str, Any] | None,
    where: str,
    seed: int | None = None,
) -> Section:
    """
    Build the frozen dataclass `cls` from a configuration section.
    """
    values = dict(values or {})
    annotations = {
        entry.name: str(entry.type)
        for entry in dataclasses.fields(cls)  # type: ignore[arg-type]
    }

    for key in values:
        if key not in annotations:
            raise unknown_key(key, list(annotations), where)

    if seed is not None and "seed" in annotations:
        values.setdefault("seed", seed)

    try:
        return cls(
            **{key: coerce(value, annotations[key]) for key, value in values.items()}
        )
    except PeFNNError:
        raise
    except (TypeError, ValueError) as error:
        raise ConfigError(f"Invalid {where} configuration: {error}") from error


def run_config_from_mapping(values: Mapping[str, Any]) -> RunConfig:
    for key in values:
        if key not in SECTIONS and key != "seed":
            raise unknown_key(key, [*SECTIONS, "seed"], "the run configuration")

    seed = values.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"Top-level seed must be an integer, got {seed!r}.")

    sections = {}
    for name, cls in SECTIONS.items():
        section = values.get(name)
        if section is not None and not isinstance(section, Mapping):
            raise ConfigError(f"Section {name!r} must be a mapping.")
        sections[name] = from_mapping(cls, section, name, seed)

    return RunConfig(seed=seed, **sections)


def load_run_config(path: Path) -> RunConfig:
    try:
        text = path.read_text()
    except OSError as error:
        raise IOFailure(f"Could not read configuration '{path}': {error}") from error

    try:
        values = yaml.safe_load(text)
    except yaml.YAMLError as error:
        raise ConfigError(f"Could not parse '{path}': {error}") from error

    if values is None:
        values = {}
    if not isinstance(values, Mapping):
        raise ConfigError(f"Configuration '{path}' must be a mapping of sections.")

    return run_config_from_mapping(values)


def plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            entry.name: plain(getattr(value, entry.name))
            for entry in dataclasses.fields(value)
        }
    if isinstance(value, (tuple, list)):
        return [plain(item) for item in value]
    return value


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """
    The resolved configuration as plain YAML/JSON data; feeding it back through
    `run_config_from_mapping` gives an equal configuration.
    """
    result: dict[str, Any] = plain(config)
    return result
