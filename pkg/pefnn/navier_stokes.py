"""
2D incompressible Navier-Stokes in vorticity form on the periodic unit square,

    ∂w/∂t + u · ∇w = ν Δw + f,    u = ∇⊥ψ,    -Δψ = w,

solved pseudo-spectrally. Time stepping is the three-stage low-storage IMEX Runge-Kutta
scheme: advection and forcing explicit, viscous term implicit per stage. Each stage
treats viscosity Crank-Nicolson style (trapezoidal, split between the old and new
state). The nonlinear term is dealiased with the 2/3 rule and its mean is zero, so
the mean vorticity never changes. Initial vorticity comes from a Gaussian random
field.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .datasets import Trajectory
from .errors import ConfigError, Instability, ShapeMismatch
from .spectral import ComplexField, Field, wavenumbers

logger = logging.getLogger(__name__)

# Low-storage IMEX RK3 coefficients, one entry per stage.
IMPLICIT_EXPLICIT = (29 / 96, -3 / 40, 1 / 6)
IMPLICIT_IMPLICIT = (37 / 160, 5 / 24, 1 / 6)
EXPLICIT_CURRENT = (8 / 15, 5 / 12, 3 / 4)
EXPLICIT_PREVIOUS = (0.0, -17 / 60, -5 / 12)


@dataclass(frozen=True)
class NSConfig:
    grid: int = 64
    viscosity: float = 1e-3
    record_dt: float = 1.0
    n_records: int = 50
    forcing_amplitude: float = 0.1
    grf_alpha: float = 2.5
    grf_tau: float = 7.0
    cfl: float = 0.5
    max_dt: float = 1e-2
    max_vorticity: float = 1e6
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.viscosity > 0:
            raise ConfigError(f"Viscosity must be positive, got {self.viscosity}.")
        if self.grid < 4:
            raise ConfigError(f"Grid must have at least 4 cells, got {self.grid}.")
        if self.n_records < 2:
            raise ConfigError("A trajectory needs at least 2 records.")
        if not (self.record_dt > 0 and self.max_dt > 0 and 0 < self.cfl <= 1):
            raise ConfigError("record_dt, max_dt and cfl must be positive (cfl ≤ 1).")

    @property
    def horizon(self) -> float:
        return (self.n_records - 1) * self.record_dt


def grf_sample(
    config: NSConfig, rng: np.random.Generator | None = None, count: int = 1
) -> Field:
    """
    Periodic Gaussian random field(s), shaped (count, grid, grid).

    Complex white noise is shaped by the square-root covariance spectrum
    N² √2 σ (4π²|k|² + τ²)^(-α/2), σ = τ^(α - 1), with the zero mode removed, and the
    real part of its inverse transform is returned. Fields have zero mean.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    shape = (count, config.grid, config.grid)
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    field = np.fft.ifft2(grf_sqrt_eigenvalues(config) * noise).real
    return np.ascontiguousarray(field - field.mean(axis=(-2, -1), keepdims=True))


def grf_sqrt_eigenvalues(config: NSConfig) -> Field:
    size, alpha, tau = config.grid, config.grf_alpha, config.grf_tau
    sigma = tau ** (0.5 * (2 * alpha - 2))
    k = wavenumbers(size)
    k_squared = k[:, None] ** 2 + k[None, :] ** 2
    sqrt_eig = (
        size**2
        * math.sqrt(2.0)
        * sigma
        * (4 * math.pi**2 * k_squared + tau**2) ** (-alpha / 2.0)
    )
    sqrt_eig[0, 0] = 0.0
    return np.asarray(sqrt_eig)


def grf_spectrum(config: NSConfig) -> Field:
    """
    Expected |fft2(w)|² of a `grf_sample` field at every wavenumber.
    """
    return np.asarray(grf_sqrt_eigenvalues(config) ** 2 / 2.0)


def grid_coordinates(size: int) -> tuple[Field, Field]:
    """
    Cell coordinates (x, y) on [0, 1)², arrays indexed [y, x].
    """
    points = np.arange(size) / size
    x, y = np.meshgrid(points, points)
    return x, y


def default_forcing(config: NSConfig) -> Field:
    x, y = grid_coordinates(config.grid)
    phase = 2 * np.pi * (x + y)
    return config.forcing_amplitude * (np.sin(phase) + np.cos(phase))


@dataclass
class SpectralOperators:
    kx: Field
    ky: Field
    k_squared: Field
    inverse_laplacian: Field
    dealias: Field

    @staticmethod
    def for_grid(size: int) -> "SpectralOperators":
        k = wavenumbers(size)
        ky, kx = np.meshgrid(k, k, indexing="ij")
        k_squared = (2 * np.pi) ** 2 * (kx**2 + ky**2)
        inverse = np.zeros_like(k_squared)
        inverse[k_squared > 0] = 1.0 / k_squared[k_squared > 0]
        cutoff = (2.0 / 3.0) * (size // 2)
        dealias = ((np.abs(kx) <= cutoff) & (np.abs(ky) <= cutoff)).astype(float)
        return SpectralOperators(
            kx=2 * np.pi * kx,
            ky=2 * np.pi * ky,
            k_squared=k_squared,
            inverse_laplacian=inverse,
            dealias=dealias,
        )

    def velocity(self, vorticity_hat: ComplexField) -> tuple[Field, Field]:
        streamfunction_hat = vorticity_hat * self.inverse_laplacian
        u = np.fft.ifft2(1j * self.ky * streamfunction_hat).real
        v = np.fft.ifft2(-1j * self.kx * streamfunction_hat).real
        return u, v

    def nonlinear(
        self, vorticity_hat: ComplexField, forcing_hat: ComplexField
    ) -> ComplexField:
        """
        Dealiased spectrum of -u · ∇w + f with a zero mean.
        """
        u, v = self.velocity(vorticity_hat)
        w_x = np.fft.ifft2(1j * self.kx * vorticity_hat).real
        w_y = np.fft.ifft2(1j * self.ky * vorticity_hat).real
        advection = np.fft.fft2(u * w_x + v * w_y)
        result = self.dealias * (forcing_hat - advection)
        result[0, 0] = 0.0
        return result


def stable_dt(
    vorticity_hat: ComplexField, operators: SpectralOperators, config: NSConfig
) -> float:
    u, v = operators.velocity(vorticity_hat)
    speed = float(np.max(np.abs(u)) + np.max(np.abs(v)))
    dx = 1.0 / config.grid
    if speed == 0:
        return config.max_dt
    return min(config.cfl * dx / speed, config.max_dt)


def imex_rk3_step(
    vorticity_hat: ComplexField,
    forcing_hat: ComplexField,
    dt: float,
    operators: SpectralOperators,
    viscosity: float,
) -> ComplexField:
    linear = -viscosity * operators.k_squared
    previous = np.zeros_like(vorticity_hat)

    for implicit_explicit, implicit, current, before in zip(
        IMPLICIT_EXPLICIT, IMPLICIT_IMPLICIT, EXPLICIT_CURRENT, EXPLICIT_PREVIOUS
    ):
        nonlinear = operators.nonlinear(vorticity_hat, forcing_hat)
        vorticity_hat = (
            vorticity_hat
            + dt
            * (
                implicit_explicit * linear * vorticity_hat
                + current * nonlinear
                + before * previous
            )
        ) / (1.0 - implicit * dt * linear)
        previous = nonlinear

    return vorticity_hat


def ns_solve(
    w0: Field, config: NSConfig, forcing: Field | None = None
) -> Trajectory:
    """
    Integrate from `w0` and record `n_records` slices `record_dt` apart, the initial
    condition being slice 0. `forcing` defaults to the zero-mean sinusoidal forcing.
    """
    if w0.shape != (config.grid, config.grid):
        raise ShapeMismatch(
            f"Initial vorticity has shape {w0.shape}, expected a {config.grid} grid."
        )

    forcing = default_forcing(config) if forcing is None else forcing
    operators = SpectralOperators.for_grid(config.grid)
    forcing_hat = np.fft.fft2(forcing)
    vorticity_hat = np.fft.fft2(w0)
    records = [np.array(w0, dtype=np.float64)]
    steps = 0

    for record in range(1, config.n_records):
        target = record * config.record_dt
        time = (record - 1) * config.record_dt

        while time < target - 1e-12 * config.record_dt:
            dt = min(stable_dt(vorticity_hat, operators, config), target - time)
            vorticity_hat = imex_rk3_step(
                vorticity_hat, forcing_hat, dt, operators, config.viscosity
            )
            time += dt
            steps += 1

        vorticity = np.fft.ifft2(vorticity_hat).real
        peak = float(np.max(np.abs(vorticity)))

        if not np.isfinite(peak) or peak > config.max_vorticity:
            raise Instability(
                f"Vorticity reached {peak:.3e} at t={target:g} "
                f"(limit {config.max_vorticity:g})."
            )

        records.append(vorticity)

    logger.debug(f"Navier-Stokes run finished after {steps} steps.")
    return Trajectory(
        fields=np.stack(records)[:, None],
        dt_record=config.record_dt,
        dx=1.0 / config.grid,
        channels=("vorticity",),
        metadata={"solver": "navier_stokes", "config": asdict(config), "steps": steps},
    )
