from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import Levenshtein
from pathvalidate import ValidationError, validate_filepath

from .errors import IOFailure


def closest_match(value: str, choices: Iterable[str]) -> str | None:
    """
    The choice with the smallest Levenshtein edit distance to `value`, or None when
    there are no choices.

    E.g.
    >>> closest_match("epohcs", ["epochs", "batch_size", "lr"])
    "epochs"
    """
    return min(
        sorted(choices),
        key=lambda choice: Levenshtein.distance(value, choice),
        default=None,
    )


def validate_output_path(path: Path) -> None:
    try:
        validate_filepath(str(path), platform="auto")
    except ValidationError as error:
        raise IOFailure(f"Invalid output path '{path}': {error}") from error


def atomic_write(path: Path, data: bytes) -> None:
    """
    Write `data` to a temporary file next to `path` and rename it into place, so
    readers never observe a partially written file.
    """
    validate_output_path(path)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        descriptor, temporary = tempfile.mkstemp(
            dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"
        )

        try:
            with os.fdopen(descriptor, "wb") as file:
                file.write(data)
            os.replace(temporary, path)
        except BaseException:
            Path(temporary).unlink(missing_ok=True)
            raise
    except OSError as error:
        raise IOFailure(f"Could not write '{path}': {error}") from error


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_sidecar(path: Path, metadata: Mapping[str, Any]) -> None:
    """
    Write the JSON metadata sidecar `<path>.json` of an output file.
    """
    text = json.dumps(metadata, indent=2, sort_keys=True, default=str)
    atomic_write(sidecar_path(path), text.encode())


def read_sidecar(path: Path) -> dict[str, Any] | None:
    try:
        metadata: dict[str, Any] = json.loads(sidecar_path(path).read_text())
    except FileNotFoundError:
        return None
    except (OSError, json.JSONDecodeError) as error:
        raise IOFailure(f"Could not read sidecar of '{path}': {error}") from error
    return metadata
