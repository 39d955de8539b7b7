"""
Model checkpoints as uncompressed `.npz` archives:

    version             format version
    config              JSON ModelConfig
    params              flat float64 parameter vector
    manifest            JSON [{name, offset, shape}, ...] slicing `params`
    optimizer.first     flat Adam first moments (same manifest), optional
    optimizer.second    flat Adam second moments, optional
    optimizer.steps     Adam update counter, optional
    epoch               next epoch to train
    history             JSON per-epoch history
    metadata            JSON run metadata (training configuration, dataset, ...)

Text entries are stored as UTF-8 byte arrays so loading never needs pickle.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, ConfigMismatch, CorruptDataset, IOFailure
from .network import ModelConfig, ModelParams, check_params
from .tape import Array
from .training import OptimizerState
from .utils import atomic_write, write_sidecar

logger = logging.getLogger(__name__)

VERSION = 1

Manifest = list[dict[str, Any]]


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    optimizer: OptimizerState | None = None
    next_epoch: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)


def flatten(params: Mapping[str, Array]) -> tuple[Array, Manifest]:
    manifest: Manifest = []
    offset = 0

    for name, value in params.items():
        manifest.append({"name": name, "offset": offset, "shape": list(value.shape)})
        offset += value.size

    vector = np.concatenate(
        [np.asarray(value, dtype=np.float64).reshape(-1) for value in params.values()]
    )
    return vector, manifest


def unflatten(vector: Array, manifest: Manifest) -> ModelParams:
    params: ModelParams = {}

    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        start = int(entry["offset"])
        params[entry["name"]] = vector[start : start + size].reshape(shape).copy()

    return params


def encode_text(value: Any) -> NDArray[np.uint8]:
    return np.frombuffer(json.dumps(value, default=str).encode(), dtype=np.uint8)


def decode_text(value: NDArray[np.uint8]) -> Any:
    return json.loads(value.tobytes().decode())


def config_differences(
    saved: Mapping[str, Any], expected: Mapping[str, Any]
) -> dict[str, tuple[Any, Any]]:
    return {
        name: (saved.get(name), expected.get(name))
        for name in sorted(set(saved) | set(expected))
        if saved.get(name) != expected.get(name)
    }


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    check_params(checkpoint.params, checkpoint.model_config)
    vector, manifest = flatten(checkpoint.params)
    arrays: dict[str, Any] = {
        "version": np.asarray(VERSION),
        "config": encode_text(checkpoint.model_config.to_dict()),
        "params": vector,
        "manifest": encode_text(manifest),
        "epoch": np.asarray(checkpoint.next_epoch),
        "history": encode_text(checkpoint.history),
        "metadata": encode_text(checkpoint.metadata),
    }

    if checkpoint.optimizer is not None:
        arrays["optimizer.first"] = flatten(checkpoint.optimizer.first)[0]
        arrays["optimizer.second"] = flatten(checkpoint.optimizer.second)[0]
        arrays["optimizer.steps"] = np.asarray(checkpoint.optimizer.steps)

    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    atomic_write(path, buffer.getvalue())
    write_sidecar(
        path,
        {
            "model": checkpoint.model_config.to_dict(),
            "next_epoch": checkpoint.next_epoch,
            **checkpoint.metadata,
        },
    )
    logger.info(f"Wrote checkpoint (epoch {checkpoint.next_epoch}) to {path}.")


def load_checkpoint(path: Path, expected: ModelConfig | None = None) -> Checkpoint:
    """
    Load a checkpoint. With `expected`, a checkpoint trained under any other model
    configuration raises `ConfigMismatch` listing the differing fields.
    """
    try:
        archive = np.load(path, allow_pickle=False)
    except OSError as error:
        raise IOFailure(f"Could not read checkpoint '{path}': {error}") from error
    except (ValueError, zipfile.BadZipFile) as error:
        raise CorruptDataset(f"'{path}' is not a checkpoint: {error}") from error

    with archive:
        try:
            version = int(archive["version"])
            if version != VERSION:
                raise CorruptDataset(f"Unsupported checkpoint version {version}.")

            saved_config = decode_text(archive["config"])
            manifest = decode_text(archive["manifest"])
            params = unflatten(archive["params"], manifest)
            optimizer = None

            if "optimizer.first" in archive.files:
                optimizer = OptimizerState(
                    first=unflatten(archive["optimizer.first"], manifest),
                    second=unflatten(archive["optimizer.second"], manifest),
                    steps=int(archive["optimizer.steps"]),
                )

            next_epoch = int(archive["epoch"])
            history = decode_text(archive["history"])
            metadata = decode_text(archive["metadata"])
        except (KeyError, ValueError) as error:
            raise CorruptDataset(
                f"Checkpoint '{path}' is incomplete: {error}"
            ) from error

    if expected is not None:
        differences = config_differences(saved_config, expected.to_dict())
        if differences:
            raise ConfigMismatch(differences)

    try:
        model_config = ModelConfig(**saved_config)
    except TypeError as error:
        raise ConfigError(
            f"Checkpoint '{path}' has an unknown model: {error}"
        ) from error

    check_params(params, model_config)
    return Checkpoint(
        model_config=model_config,
        params=params,
        optimizer=optimizer,
        next_epoch=next_epoch,
        history=history,
        metadata=metadata,
    )
