"""
Trajectory datasets and their binary file format.

Layout (all little-endian):

    header   36 bytes  "<4sIIIIIIB7x": magic b"PEFN", version, trajectories,
                       time slices, channels, height, width, dtype code (0=f32, 1=f64)
    payload            C-order (trajectory, time, channel, y, x)
    footer    4 bytes  CRC32 of the payload

Grid spacing, record interval, channel names and the generating configuration live
in the JSON sidecar `<path>.json`.
"""

from __future__ import annotations

import dataclasses
import logging
import struct
import zlib
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, CorruptDataset, IOFailure, ShapeMismatch
from .utils import atomic_write, read_sidecar, write_sidecar

logger = logging.getLogger(__name__)

MAGIC = b"PEFN"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIIB7x")
FOOTER = struct.Struct("<I")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {"f32": 0, "f64": 1}


@dataclass
class Trajectory:
    """
    One simulated trajectory: `fields` is (time, channels, height, width).
    """

    fields: NDArray[np.float64]
    dt_record: float
    dx: float
    channels: tuple[str, ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.fields.ndim != 4:
            raise ShapeMismatch(
                f"Trajectory fields must be (time, channels, height, width), "
                f"got shape {self.fields.shape}."
            )
        if len(self.channels) != self.fields.shape[1]:
            raise ShapeMismatch(
                f"{len(self.channels)} channel names for {self.fields.shape[1]} "
                "channels."
            )


@dataclass
class Dataset:
    """
    Equally shaped trajectories: `fields` is (trajectories, time, channels, height,
    width).
    """

    fields: NDArray[np.float64]
    dt_record: float = 1.0
    dx: float = 1.0
    channels: tuple[str, ...] = ()
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.fields.ndim != 5:
            raise ShapeMismatch(
                "Dataset fields must be (trajectories, time, channels, height, "
                f"width), got shape {self.fields.shape}."
            )
        if not self.channels:
            self.channels = tuple(f"c{index}" for index in range(self.fields.shape[2]))

    def __len__(self) -> int:
        return int(self.fields.shape[0])

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        count, length, channels, height, width = self.fields.shape
        return count, length, channels, height, width

    @staticmethod
    def from_trajectories(trajectories: Sequence[Trajectory]) -> "Dataset":
        if not trajectories:
            raise ShapeMismatch("A dataset needs at least one trajectory.")

        first = trajectories[0]

        for trajectory in trajectories[1:]:
            if trajectory.fields.shape != first.fields.shape:
                raise ShapeMismatch(
                    f"Trajectory shape {trajectory.fields.shape} differs from "
                    f"{first.fields.shape}."
                )

        return Dataset(
            fields=np.stack([trajectory.fields for trajectory in trajectories]),
            dt_record=first.dt_record,
            dx=first.dx,
            channels=first.channels,
            metadata={
                "trajectories": [trajectory.metadata for trajectory in trajectories]
            },
        )

    def subset(self, indices: Sequence[int] | NDArray[np.intp]) -> "Dataset":
        return dataclasses.replace(self, fields=self.fields[np.asarray(indices)])

    def window(self, length: int, stride: int | None = None) -> "Dataset":
        """
        Cut every trajectory into samples of `length` consecutive slices starting
        every `stride` slices (default: non-overlapping).
        """
        stride = stride or length
        total = self.fields.shape[1]

        if length < 2 or stride < 1 or length > total:
            raise ConfigError(
                f"Cannot cut windows of {length} slices (stride {stride}) from "
                f"trajectories of {total} slices."
            )

        starts = range(0, total - length + 1, stride)
        windows = [
            self.fields[:, start : start + length] for start in starts
        ]
        fields = np.stack(windows, axis=1).reshape(
            (-1, length) + self.fields.shape[2:]
        )
        return dataclasses.replace(
            self,
            fields=fields,
            metadata={**self.metadata, "window": {"length": length, "stride": stride}},
        )

    def fingerprint(self) -> str:
        """
        CRC32 of the fields in double precision, as 8 hex digits.
        """
        payload = np.ascontiguousarray(self.fields, dtype=np.float64).tobytes()
        return f"{zlib.crc32(payload):08x}"

    def split_indices(
        self, train_fraction: float, valid_fraction: float, seed: int = 0
    ) -> tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.intp]]:
        """
        Trajectory indices of a deterministic shuffled train/valid/test split.
        """
        if not (
            0 < train_fraction <= 1
            and 0 <= valid_fraction < 1
            and train_fraction + valid_fraction <= 1
        ):
            raise ConfigError(
                f"Invalid split fractions train={train_fraction} "
                f"valid={valid_fraction}."
            )

        order = np.random.default_rng(seed).permutation(len(self))
        train_end = max(1, int(round(train_fraction * len(self))))
        valid_end = min(len(self), train_end + int(round(valid_fraction * len(self))))
        return order[:train_end], order[train_end:valid_end], order[valid_end:]

    def split(
        self, train_fraction: float, valid_fraction: float, seed: int = 0
    ) -> tuple["Dataset", "Dataset", "Dataset"]:
        train, valid, test = self.split_indices(train_fraction, valid_fraction, seed)
        return self.subset(train), self.subset(valid), self.subset(test)


def encode_dataset(dataset: Dataset, dtype: str = "f32") -> bytes:
    try:
        code = DTYPE_CODES[dtype]
    except KeyError:
        raise ConfigError(
            f"Unknown dataset dtype {dtype!r}, expected one of {sorted(DTYPE_CODES)}."
        ) from None

    payload = np.ascontiguousarray(dataset.fields, dtype=DTYPES[code]).tobytes()
    header = HEADER.pack(MAGIC, VERSION, *dataset.shape, code)
    return header + payload + FOOTER.pack(zlib.crc32(payload))


def decode_dataset(data: bytes) -> NDArray[np.float64]:
    if len(data) < HEADER.size + FOOTER.size:
        raise CorruptDataset(f"Dataset file is truncated ({len(data)} bytes).")

    magic, version, *shape, code = HEADER.unpack_from(data)

    if magic != MAGIC:
        raise CorruptDataset(f"Bad dataset magic {magic!r}.")
    if version != VERSION:
        raise CorruptDataset(f"Unsupported dataset version {version}.")
    if code not in DTYPES:
        raise CorruptDataset(f"Unknown dataset dtype code {code}.")

    dtype = DTYPES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = data[HEADER.size : -FOOTER.size]

    if len(payload) != expected:
        raise CorruptDataset(
            f"Dataset payload holds {len(payload)} bytes, header declares {expected}."
        )

    (checksum,) = FOOTER.unpack_from(data, len(data) - FOOTER.size)

    if zlib.crc32(payload) != checksum:
        raise CorruptDataset("Dataset payload fails its CRC32 check.")

    values = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return values.astype(np.float64)


def write_dataset(
    dataset: Dataset,
    path: Path,
    dtype: str = "f32",
    metadata: dict[str, Any] | None = None,
) -> None:
    """
    Write the binary dataset and its sidecar. `metadata` (typically the resolved run
    configuration) is merged into the sidecar.
    """
    atomic_write(path, encode_dataset(dataset, dtype))
    write_sidecar(
        path,
        {
            "dtype": dtype,
            "dt_record": dataset.dt_record,
            "dx": dataset.dx,
            "channels": list(dataset.channels),
            "shape": list(dataset.shape),
            **dataset.metadata,
            **(metadata or {}),
        },
    )
    logger.info(f"Wrote {len(dataset)} trajectories {dataset.shape[1:]} to {path}.")


def read_dataset(path: Path) -> Dataset:
    try:
        data = path.read_bytes()
    except OSError as error:
        raise IOFailure(f"Could not read dataset '{path}': {error}") from error

    fields = decode_dataset(data)
    sidecar = read_sidecar(path)

    if sidecar is None:
        logger.warning(f"Dataset '{path}' has no sidecar; assuming unit spacing.")
        return Dataset(fields)

    return Dataset(
        fields=fields,
        dt_record=float(sidecar.get("dt_record", 1.0)),
        dx=float(sidecar.get("dx", 1.0)),
        channels=tuple(sidecar.get("channels", ())),
        metadata=sidecar,
    )
