"""
Synthetic weather-like fields
Periodic advection-diffusion with smooth random forcing stands in for reanalysis
data. Upper-air groups evolve slowly; surface variables are fast fields coupled
nonlinearly to the upper-air state.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger
from scipy import ndimage

from config.settings import (GRID_HEIGHT, GRID_WIDTH, MAX_ADVECTION_CFL, MAX_DIFFUSION_NUMBER, SPIN_UP_STEPS,
                             TIME_STEP)
from src.errors import CflViolationError, ConfigError
from src.model.catalog import VariableCatalog, VariableKind

# Physical scale and offset per variable (stored value = scale * field + offset)
VARIABLE_UNITS = {
    "z": (800.0, 50000.0),
    "q": (0.002, 0.005),
    "u": (10.0, 5.0),
    "v": (8.0, 0.0),
    "t": (15.0, 250.0),
    "u10": (5.0, 0.0),
    "v10": (5.0, 0.0),
    "t2m": (10.0, 285.0),
    "msl": (1000.0, 101300.0),
    "sp": (1500.0, 98000.0),
}

# Upper-air group driving each surface variable
SURFACE_SOURCES = {"u10": "U", "v10": "V", "t2m": "T", "msl": "Z", "sp": "Z"}

# Default (row, column) velocities in grid cells per step
UPPER_AIR_VELOCITIES = {"Z": (0.2, 0.5), "Q": (-0.15, 0.4), "U": (0.1, 0.6), "V": (-0.1, 0.3), "T": (0.05, 0.45)}
SURFACE_VELOCITY = (0.3, 0.8)


@dataclass(frozen=True)
class GroupDynamics:
    """Advection velocity (cells/step), diffusion coefficient, forcing amplitude, relaxation time"""
    velocity: Tuple[float, float] = (0.0, 0.0)
    diffusion: float = 0.0
    forcing: float = 0.0
    time_scale: float = 1.0


@dataclass
class SyntheticFieldSpec:
    """Grid, catalog and per-group dynamics of one synthetic trajectory"""
    catalog: VariableCatalog
    dynamics: Dict[str, GroupDynamics]
    grid: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH)
    dt: float = TIME_STEP
    seed: int = 0
    spin_up: int = SPIN_UP_STEPS
    forcing_length: float = 3.0
    coupling: float = 1.5
    units: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        missing = [g.name for g in self.catalog.groups if g.name not in self.dynamics]
        if missing:
            raise ConfigError(f"no dynamics given for groups {missing}")
        for name, dyn in self.dynamics.items():
            if dyn.time_scale <= 0:
                raise ConfigError(f"time scale of {name} must be positive, got {dyn.time_scale}")
            courant = max(abs(dyn.velocity[0]), abs(dyn.velocity[1])) * self.dt
            if courant > MAX_ADVECTION_CFL:
                raise CflViolationError(f"{name}: advection moves {courant:.3f} cells per step "
                                        f"(limit {MAX_ADVECTION_CFL})")
            if dyn.diffusion < 0 or dyn.diffusion * self.dt > MAX_DIFFUSION_NUMBER:
                raise CflViolationError(f"{name}: diffusion number {dyn.diffusion * self.dt:.3f} "
                                        f"outside [0, {MAX_DIFFUSION_NUMBER}]")
        upper = [self.dynamics[g.name].time_scale for g in self.catalog.groups if g.kind == VariableKind.UPPER_AIR]
        surface = [self.dynamics[g.name].time_scale for g in self.catalog.groups if g.kind == VariableKind.SURFACE]
        if upper and surface and min(upper) <= max(surface):
            raise ConfigError("upper-air groups need slower time scales than surface groups")
        if self.spin_up < 0:
            raise ConfigError("spin-up steps must be >= 0")

    def channel_units(self, channel: str) -> Tuple[float, float]:
        if channel in self.units:
            return self.units[channel]
        if channel in VARIABLE_UNITS:
            return VARIABLE_UNITS[channel]
        return VARIABLE_UNITS.get(channel.rstrip("0123456789"), (1.0, 0.0))


def default_dynamics(catalog: VariableCatalog) -> Dict[str, GroupDynamics]:
    """Slow upper-air and fast surface dynamics for every group of the catalog"""
    dynamics = {}
    for index, group in enumerate(catalog.groups):
        if group.kind == VariableKind.UPPER_AIR:
            velocity = UPPER_AIR_VELOCITIES.get(group.name, (0.1 * ((index % 3) - 1), 0.4))
            dynamics[group.name] = GroupDynamics(velocity, diffusion=0.05, forcing=0.5, time_scale=50.0)
        else:
            dynamics[group.name] = GroupDynamics(SURFACE_VELOCITY, diffusion=0.1, forcing=1.0, time_scale=5.0)
    return dynamics


def default_spec(catalog: VariableCatalog, grid: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH),
                 seed: int = 0, spin_up: int = SPIN_UP_STEPS) -> SyntheticFieldSpec:
    return SyntheticFieldSpec(catalog, default_dynamics(catalog), grid=grid, seed=seed, spin_up=spin_up)


# ===== Numerics =====

def laplacian(fields: np.ndarray) -> np.ndarray:
    """Periodic 5-point Laplacian over the last two axes"""
    return (np.roll(fields, 1, axis=-2) + np.roll(fields, -1, axis=-2)
            + np.roll(fields, 1, axis=-1) + np.roll(fields, -1, axis=-1) - 4.0 * fields)


def smooth_noise(rng: np.random.Generator, shape: Tuple[int, ...], length: float) -> np.ndarray:
    """Unit-variance periodic Gaussian random field, smoothed over `length` cells"""
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=(0,) * (len(shape) - 2) + (length, length),
                                    mode="wrap")
    std = noise.std(axis=(-2, -1), keepdims=True)
    return noise / np.where(std > 0, std, 1.0)


def advect(fields: np.ndarray, velocity: Tuple[float, float], dt: float) -> np.ndarray:
    """Semi-Lagrangian step: value at x moves to x + u dt (linear interpolation, periodic)"""
    if velocity[0] == 0.0 and velocity[1] == 0.0:
        return fields
    shift = (0.0,) * (fields.ndim - 2) + (velocity[0] * dt, velocity[1] * dt)
    return ndimage.shift(fields, shift, order=1, mode="grid-wrap")


def step_group(fields: np.ndarray, dynamics: GroupDynamics, dt: float, rng: np.random.Generator,
               forcing_length: float) -> np.ndarray:
    """Advance the stacked fields [L, H, W] of one group by one step"""
    out = advect(fields, dynamics.velocity, dt)
    if dynamics.diffusion:
        out = out + dynamics.diffusion * dt * laplacian(out)
    if dynamics.forcing:
        relax = dt / dynamics.time_scale
        kick = smooth_noise(rng, fields.shape, forcing_length)
        out = out - relax * out + dynamics.forcing * np.sqrt(2.0 * relax) * kick
    return out


# ===== Trajectories =====

class FieldSimulator:
    """Evolves the prognostic state of every group and maps it to observed channels"""

    def __init__(self, spec: SyntheticFieldSpec):
        self.spec = spec
        self.catalog = spec.catalog
        self.rng = np.random.default_rng(spec.seed)
        height, width = spec.grid
        self.state: Dict[str, np.ndarray] = {}
        for group in self.catalog.groups:
            shape = (group.levels, height, width)
            if spec.dynamics[group.name].forcing:
                self.state[group.name] = smooth_noise(self.rng, shape, spec.forcing_length)
            else:
                self.state[group.name] = self.rng.standard_normal(shape)
        self._sources = self._surface_sources()

    def _surface_sources(self) -> Dict[str, Tuple[str, np.ndarray]]:
        """Surface channel -> (driving upper-air group, level weights favouring the lowest levels)"""
        upper = [g for g in self.catalog.groups if g.kind == VariableKind.UPPER_AIR]
        sources = {}
        for group in self.catalog.groups:
            if group.kind != VariableKind.SURFACE:
                continue
            for offset, channel in enumerate(group.channels):
                if not upper:
                    break
                name = SURFACE_SOURCES.get(channel)
                driver = next((g for g in upper if g.name == name), upper[offset % len(upper)])
                weights = np.arange(1, driver.levels + 1, dtype=np.float64)
                sources[channel] = (driver.name, weights / weights.sum())
        return sources

    def step(self):
        for group in self.catalog.groups:
            self.state[group.name] = step_group(self.state[group.name], self.spec.dynamics[group.name],
                                                self.spec.dt, self.rng, self.spec.forcing_length)

    def observe(self) -> np.ndarray:
        """Current frame [H, W, C] in physical units"""
        channels: List[np.ndarray] = []
        for group in self.catalog.groups:
            fields = self.state[group.name]
            for level, channel in enumerate(group.channels):
                value = fields[level]
                if channel in self._sources:
                    driver, weights = self._sources[channel]
                    column = np.tensordot(weights, self.state[driver], axes=1)
                    value = self.spec.coupling * np.tanh(column) + value
                scale, offset = self.spec.channel_units(channel)
                channels.append(scale * value + offset)
        return np.stack(channels, axis=-1)


def generate(spec: SyntheticFieldSpec, frames: int) -> np.ndarray:
    """
    Deterministic trajectory of `frames` consecutive states

    Returns:
        float32 array [T, H, W, C] in physical units; consecutive frames form the
        (X^t, X^{t+1}) training pairs
    """
    if frames < 2:
        raise ConfigError(f"a trajectory needs at least 2 frames, got {frames}")
    simulator = FieldSimulator(spec)
    for _ in range(spec.spin_up):
        simulator.step()
    height, width = spec.grid
    out = np.empty((frames, height, width, spec.catalog.channel_count), dtype=np.float32)
    for t in range(frames):
        if t:
            simulator.step()
        out[t] = simulator.observe()
    logger.debug(f"Generated {frames} frames of {spec.catalog.channel_count} channels "
                 f"on {height}x{width} (seed {spec.seed})")
    return out


def persistence_rmse(frames: np.ndarray) -> np.ndarray:
    """Per-channel RMSE of the forecast X^{t+1} = X^t over a trajectory"""
    diff = frames[1:].astype(np.float64) - frames[:-1].astype(np.float64)
    return np.sqrt(np.mean(diff * diff, axis=(0, 1, 2)))
