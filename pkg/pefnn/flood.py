"""
Local-inertial flood model on a staggered grid.

Depths h live at cell centers, unit-width discharges at faces: `qx` (H, W + 1) on the
faces between columns (positive eastwards), `qy` (H + 1, W) on the faces between rows
(positive southwards, row 0 being the north edge). Each step updates

    q  ← (q̂ - g h_f dt ∂η/∂n) / (1 + g dt n² |q̂| / h_f^(7/3))
    h  ← h + dt (-∇·q + R)

with η = h + z, the face flow depth h_f = max(η) - max(z) and the diffused discharge
q̂ = θ q + (1 - θ) / 2 (q₋ + q₊) of the face and its two neighbours along the flow
direction. Faces with h_f below the dry threshold carry no flow. The time step is
dt = α dx / √(g h_max), capped by `max_dt` and shortened to land on record times and
rainfall changes.

Edges are closed walls unless listed as open, in which case a dry ghost cell at the
edge elevation lets water leave (never enter). Inflow hydrographs impose an inward
discharge on a set of edge faces. Infiltration is not modelled.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .datasets import Trajectory
from .errors import ConfigError, Instability, NegativeDepth, ShapeMismatch
from .spectral import Field
from .terrain import DemKind, make_synthetic_dem

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
ROUNDOFF_DEPTH = 1e-12


class Edge(str, Enum):
    NORTH = "north"
    SOUTH = "south"
    EAST = "east"
    WEST = "west"

    @property
    def inward(self) -> float:
        """
        Sign of a face discharge that flows into the domain across this edge.
        """
        return 1.0 if self in (Edge.NORTH, Edge.WEST) else -1.0


@dataclass(frozen=True)
class RainfallSeries:
    """
    Piecewise-constant rainfall rate in m/s: `rates[i]` holds from `times[i]` until the
    next entry, the last rate indefinitely. No rain falls before `times[0]`.
    """

    times: tuple[float, ...] = (0.0,)
    rates: tuple[float, ...] = (0.0,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))

        if not self.times or len(self.times) != len(self.rates):
            raise ConfigError("Rainfall needs one rate per change time.")
        if any(later < earlier for earlier, later in zip(self.times, self.times[1:])):
            raise ConfigError("Rainfall change times must be non-decreasing.")
        if min(self.rates) < 0:
            raise ConfigError("Rainfall rates cannot be negative.")

    @staticmethod
    def pulse(rate: float, duration: float | None = None) -> "RainfallSeries":
        if duration is None:
            return RainfallSeries((0.0,), (rate,))
        return RainfallSeries((0.0, duration), (rate, 0.0))

    def rate(self, time: float) -> float:
        index = int(np.searchsorted(self.times, time, side="right")) - 1
        return self.rates[index] if index >= 0 else 0.0

    def next_change(self, time: float) -> float:
        return next((t for t in self.times if t > time), math.inf)


@dataclass(frozen=True)
class InflowBoundary:
    """
    Discharge hydrograph (m³/s, linearly interpolated, held constant outside
    `times`) spread evenly over the faces of `cells` along `edge`.
    """

    edge: Edge
    cells: tuple[int, ...]
    times: tuple[float, ...]
    discharges: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edge", Edge(self.edge))
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "discharges", tuple(float(q) for q in self.discharges))

        if not self.cells:
            raise ConfigError("An inflow boundary needs at least one cell.")
        if not self.times or len(self.times) != len(self.discharges):
            raise ConfigError("An inflow hydrograph needs one discharge per time.")
        if min(self.discharges) < 0:
            raise ConfigError("Inflow discharges cannot be negative.")

    def discharge(self, time: float) -> float:
        return float(np.interp(time, self.times, self.discharges))


@dataclass
class FloodConfig:
    dem: Field
    dx: float
    manning: Field | float = 0.03
    rainfall: RainfallSeries = field(default_factory=RainfallSeries)
    rainfall_pattern: Field | None = None
    inflows: tuple[InflowBoundary, ...] = ()
    open_edges: tuple[Edge, ...] = ()
    initial_depth: Field | None = None
    theta: float = 0.7
    alpha: float = 0.7
    gravity: float = 9.81
    horizon: float = 3600.0
    record_interval: float = 30.0
    max_dt: float = 10.0
    dry_depth: float = 1e-4
    clamp_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        self.dem = np.asarray(self.dem, dtype=np.float64)

        if self.dem.ndim != 2:
            raise ShapeMismatch(f"DEM must be a 2D grid, got shape {self.dem.shape}.")
        if not np.all(np.isfinite(self.dem)):
            raise ConfigError("DEM contains non-finite elevations.")

        self.manning = self.grid_field(self.manning, "Manning coefficient")
        if not np.all(self.manning > 0):
            raise ConfigError("Manning coefficients must be positive.")

        if self.rainfall_pattern is not None:
            self.rainfall_pattern = self.grid_field(
                self.rainfall_pattern, "Rainfall pattern"
            )
        if self.initial_depth is not None:
            self.initial_depth = self.grid_field(self.initial_depth, "Initial depth")
            if np.any(self.initial_depth < 0):
                raise ConfigError("Initial depths cannot be negative.")

        self.open_edges = tuple(Edge(edge) for edge in self.open_edges)
        self.inflows = tuple(self.inflows)

        for inflow in self.inflows:
            length = self.edge_length(inflow.edge)
            if min(inflow.cells) < 0 or max(inflow.cells) >= length:
                raise ConfigError(
                    f"Inflow cells {inflow.cells} fall outside the {inflow.edge.value} "
                    f"edge of {length} cells."
                )

        if not 0 < self.theta <= 1:
            raise ConfigError(f"θ must lie in (0, 1], got {self.theta}.")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"α must lie in (0, 1], got {self.alpha}.")
        if not (self.dx > 0 and self.gravity > 0 and self.max_dt > 0):
            raise ConfigError("dx, gravity and max_dt must be positive.")
        if not (self.horizon >= 0 and self.record_interval > 0):
            raise ConfigError("Horizon and record interval must be positive.")

    def grid_field(self, value: Field | float, name: str) -> Field:
        try:
            return np.array(
                np.broadcast_to(np.asarray(value, dtype=np.float64), self.dem.shape)
            )
        except ValueError:
            raise ShapeMismatch(
                f"{name} of shape {np.shape(value)} does not match the DEM "
                f"{self.dem.shape}."
            ) from None

    def edge_length(self, edge: Edge) -> int:
        height, width = self.dem.shape
        return width if edge in (Edge.NORTH, Edge.SOUTH) else height

    @property
    def n_records(self) -> int:
        return int(math.floor(self.horizon / self.record_interval + 1e-9)) + 1

    def to_metadata(self) -> dict[str, Any]:
        return {
            "grid": list(self.dem.shape),
            "dx": self.dx,
            "theta": self.theta,
            "alpha": self.alpha,
            "gravity": self.gravity,
            "horizon": self.horizon,
            "record_interval": self.record_interval,
            "max_dt": self.max_dt,
            "dry_depth": self.dry_depth,
            "open_edges": [edge.value for edge in self.open_edges],
            "rainfall": asdict(self.rainfall),
            "inflows": [
                {**asdict(inflow), "edge": inflow.edge.value} for inflow in self.inflows
            ],
        }


@dataclass
class MassBudget:
    """
    Water volumes in m³. Clamping negative depths to zero adds `clamped`.
    """

    initial: float
    rain: float = 0.0
    inflow: float = 0.0
    outflow: float = 0.0
    clamped: float = 0.0

    @property
    def supplied(self) -> float:
        return self.initial + self.rain + self.inflow

    @property
    def expected(self) -> float:
        return self.supplied - self.outflow + self.clamped

    def to_dict(self, final: float) -> dict[str, float]:
        return {
            **asdict(self),
            "final": final,
            "error": final - self.expected,
        }


def edge_faces(qx: Field, qy: Field, edge: Edge) -> Field:
    """
    View of the boundary face discharges along `edge`.
    """
    if edge is Edge.WEST:
        return qx[:, 0]
    if edge is Edge.EAST:
        return qx[:, -1]
    if edge is Edge.NORTH:
        return qy[0, :]
    return qy[-1, :]


class FloodSolver:
    def __init__(self, config: FloodConfig) -> None:
        self.config = config
        height, width = config.dem.shape
        self.depth: Field = (
            np.zeros_like(config.dem)
            if config.initial_depth is None
            else config.initial_depth.copy()
        )
        self.qx: Field = np.zeros((height, width + 1))
        self.qy: Field = np.zeros((height + 1, width))
        self.time = 0.0
        self.steps = 0
        self.budget = MassBudget(initial=self.volume)

        self.bed = np.pad(config.dem, 1, mode="edge")
        manning = np.pad(np.asarray(config.manning), 1, mode="edge")
        self.manning_x = 0.5 * (manning[1:-1, :-1] + manning[1:-1, 1:])
        self.manning_y = 0.5 * (manning[:-1, 1:-1] + manning[1:, 1:-1])
        self.pattern = (
            np.ones_like(config.dem)
            if config.rainfall_pattern is None
            else config.rainfall_pattern
        )

    @property
    def volume(self) -> float:
        return float(self.depth.sum() * self.config.dx**2)

    def stable_dt(self) -> float:
        config = self.config
        deepest = float(self.depth.max())
        if deepest <= 0:
            return config.max_dt
        return min(
            config.alpha * config.dx / math.sqrt(config.gravity * deepest),
            config.max_dt,
        )

    def face_update(
        self,
        discharge: Field,
        surface_low: Field,
        surface_high: Field,
        bed_low: Field,
        bed_high: Field,
        manning: Field,
        axis: int,
        dt: float,
    ) -> Field:
        """
        Local-inertial update of the faces between `low` and `high` neighbours along
        `axis`.
        """
        config = self.config
        gravity = config.gravity
        face_depth = np.maximum(surface_low, surface_high) - np.maximum(
            bed_low, bed_high
        )
        wet = face_depth >= config.dry_depth
        face_depth = np.where(wet, face_depth, 1.0)

        pad = [(0, 0), (0, 0)]
        pad[axis] = (1, 1)
        padded = np.pad(discharge, pad, mode="edge")
        before = padded[:, :-2] if axis == 1 else padded[:-2, :]
        after = padded[:, 2:] if axis == 1 else padded[2:, :]
        diffused = config.theta * discharge + 0.5 * (1 - config.theta) * (
            before + after
        )

        slope = (surface_high - surface_low) / config.dx
        updated = (diffused - gravity * face_depth * dt * slope) / (
            1
            + gravity
            * dt
            * manning**2
            * np.abs(diffused)
            / face_depth ** (7.0 / 3.0)
        )
        return np.where(wet, updated, 0.0)

    def apply_boundaries(self, qx: Field, qy: Field) -> None:
        config = self.config

        for edge in Edge:
            faces = edge_faces(qx, qy, edge)
            if edge not in config.open_edges:
                faces[:] = 0.0
            elif edge.inward > 0:
                np.minimum(faces, 0.0, out=faces)
            else:
                np.maximum(faces, 0.0, out=faces)

        for inflow in config.inflows:
            discharge = inflow.discharge(self.time) / (len(inflow.cells) * config.dx)
            faces = edge_faces(qx, qy, inflow.edge)
            faces[list(inflow.cells)] = inflow.edge.inward * discharge

    def limit_outflow(self, qx: Field, qy: Field, available: Field, dt: float) -> None:
        """
        Scale the outgoing discharges of every cell so one step never drains more
        water than the cell holds. Each face is outgoing for at most one cell.
        """
        outgoing = (
            dt
            / self.config.dx
            * (
                np.maximum(qx[:, 1:], 0)
                + np.maximum(-qx[:, :-1], 0)
                + np.maximum(qy[1:, :], 0)
                + np.maximum(-qy[:-1, :], 0)
            )
        )
        factor = np.ones_like(outgoing)
        draining = outgoing > available
        factor[draining] = available[draining] / outgoing[draining]
        factor = np.pad(factor, 1, constant_values=1.0)

        qx *= np.where(qx > 0, factor[1:-1, :-1], factor[1:-1, 1:])
        qy *= np.where(qy > 0, factor[:-1, 1:-1], factor[1:, 1:-1])

    def step(self, limit: float = math.inf) -> float:
        """
        Advance one step of at most `limit` seconds and return its length.
        """
        config = self.config
        dt = min(
            self.stable_dt(),
            limit,
            config.rainfall.next_change(self.time) - self.time,
        )
        dx = config.dx

        surface = self.bed + np.pad(self.depth, 1)
        qx = self.face_update(
            self.qx,
            surface[1:-1, :-1],
            surface[1:-1, 1:],
            self.bed[1:-1, :-1],
            self.bed[1:-1, 1:],
            self.manning_x,
            1,
            dt,
        )
        qy = self.face_update(
            self.qy,
            surface[:-1, 1:-1],
            surface[1:, 1:-1],
            self.bed[:-1, 1:-1],
            self.bed[1:, 1:-1],
            self.manning_y,
            0,
            dt,
        )
        self.apply_boundaries(qx, qy)

        rain = config.rainfall.rate(self.time) * self.pattern
        self.limit_outflow(qx, qy, self.depth + dt * rain, dt)

        divergence = (qx[:, 1:] - qx[:, :-1] + qy[1:, :] - qy[:-1, :]) / dx
        depth = self.depth + dt * (rain - divergence)

        if not np.all(np.isfinite(depth)):
            raise Instability(f"Flood depth became non-finite at t={self.time:g} s.")

        inward = np.concatenate(
            [edge.inward * edge_faces(qx, qy, edge) for edge in Edge]
        )
        self.budget.rain += float(dt * rain.sum() * dx**2)
        self.budget.inflow += float(dt * dx * np.maximum(inward, 0).sum())
        self.budget.outflow += float(dt * dx * np.maximum(-inward, 0).sum())

        self.clamp(depth)
        self.depth, self.qx, self.qy = depth, qx, qy
        self.time += dt
        self.steps += 1
        return dt

    def clamp(self, depth: Field) -> None:
        negative = depth < 0
        if not negative.any():
            return

        lowest = float(depth.min())
        self.budget.clamped += float(-depth[negative].sum() * self.config.dx**2)
        depth[negative] = 0.0

        if lowest < -ROUNDOFF_DEPTH:
            logger.warning(
                f"Clamped {negative.sum()} negative depths (lowest {lowest:.3e} m) "
                f"at t={self.time:g} s."
            )

        limit = self.config.clamp_tolerance * self.budget.supplied
        if self.budget.clamped > limit:
            raise NegativeDepth(
                f"Clamped volume {self.budget.clamped:.3e} m³ exceeds "
                f"{self.config.clamp_tolerance:g} of the supplied "
                f"{self.budget.supplied:.3e} m³."
            )

    def advance_to(self, target: float) -> None:
        tolerance = 1e-9 * self.config.record_interval
        while self.time < target - tolerance:
            self.step(target - self.time)
        self.time = max(self.time, target)

    def run(self) -> Trajectory:
        config = self.config
        records = [self.depth.copy()]

        for record in range(1, config.n_records):
            self.advance_to(record * config.record_interval)
            records.append(self.depth.copy())

        budget = self.budget.to_dict(self.volume)
        logger.debug(
            f"Flood run finished after {self.steps} steps, mass error "
            f"{budget['error']:.3e} m³."
        )
        return Trajectory(
            fields=np.stack(records)[:, None],
            dt_record=config.record_interval,
            dx=config.dx,
            channels=("h",),
            metadata={
                "solver": "flood",
                "config": config.to_metadata(),
                "steps": self.steps,
                "mass_budget": budget,
            },
        )


def flood_solve(config: FloodConfig) -> Trajectory:
    """
    Depth records every `record_interval` seconds up to the horizon, the initial
    state included. Metadata carries the mass budget of the run.
    """
    return FloodSolver(config).run()


def edge_profile(dem: Field, edge: Edge) -> Field:
    if edge is Edge.NORTH:
        return dem[0, :]
    if edge is Edge.SOUTH:
        return dem[-1, :]
    if edge is Edge.WEST:
        return dem[:, 0]
    return dem[:, -1]


@dataclass(frozen=True)
class FloodScenario:
    """
    Synthetic flood scenario: a DEM kind, uniform roughness, a rainfall pulse and an
    optional inflow hydrograph of daily discharges entering through `inflow_width`
    cells centred on the lowest cell of `inflow_edge`.
    """

    dem_kind: DemKind = DemKind.VALLEY
    grid: int = 64
    dx: float = 30.0
    relief: float = 10.0
    roughness: float = 0.1
    manning: float = 0.03
    rain_rate: float = 1e-5
    rain_duration: float | None = 3600.0
    inflow_discharge: tuple[float, ...] = ()
    inflow_edge: Edge = Edge.NORTH
    inflow_width: int = 3
    open_edges: tuple[Edge, ...] = (Edge.SOUTH,)
    theta: float = 0.7
    alpha: float = 0.7
    horizon: float = 7200.0
    record_interval: float = 30.0
    max_dt: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dem_kind", DemKind(self.dem_kind))
        object.__setattr__(self, "inflow_edge", Edge(self.inflow_edge))
        object.__setattr__(
            self, "open_edges", tuple(Edge(edge) for edge in self.open_edges)
        )
        object.__setattr__(
            self, "inflow_discharge", tuple(float(q) for q in self.inflow_discharge)
        )

        if not 1 <= self.inflow_width <= self.grid:
            raise ConfigError(
                f"Inflow width must lie in [1, {self.grid}], got {self.inflow_width}."
            )

    def inflow_cells(self, dem: Field) -> tuple[int, ...]:
        lowest = int(np.argmin(edge_profile(dem, self.inflow_edge)))
        start = min(
            max(lowest - self.inflow_width // 2, 0), self.grid - self.inflow_width
        )
        return tuple(range(start, start + self.inflow_width))

    def build(self, seed: int | None = None) -> FloodConfig:
        seed = self.seed if seed is None else seed
        dem = make_synthetic_dem(
            self.dem_kind, self.grid, seed, self.relief, self.roughness
        )
        inflows: Sequence[InflowBoundary] = ()

        if self.inflow_discharge:
            days = range(len(self.inflow_discharge))
            inflows = (
                InflowBoundary(
                    edge=self.inflow_edge,
                    cells=self.inflow_cells(dem),
                    times=tuple(SECONDS_PER_DAY * day for day in days),
                    discharges=self.inflow_discharge,
                ),
            )

        return FloodConfig(
            dem=dem,
            dx=self.dx,
            manning=self.manning,
            rainfall=RainfallSeries.pulse(self.rain_rate, self.rain_duration),
            inflows=tuple(inflows),
            open_edges=self.open_edges,
            theta=self.theta,
            alpha=self.alpha,
            horizon=self.horizon,
            record_interval=self.record_interval,
            max_dt=self.max_dt,
        )
