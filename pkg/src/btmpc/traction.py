"""Longitudinal vehicle model: speed trace to battery-side traction power."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .battery import DomainError


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1500.0  # kg
    drag_area: float = 0.66  # Cd*A, m^2
    rolling_coeff: float = 0.009
    air_density: float = 1.2  # kg/m^3
    gravity: float = 9.81
    driveline_efficiency: float = 0.9
    regen_efficiency: float = 0.55
    regen_power_floor: float = -30_000.0  # W

    def __post_init__(self):
        for name in ("mass", "drag_area", "rolling_coeff", "air_density", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("driveline_efficiency", "regen_efficiency"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not self.regen_power_floor < 0:
            raise ValueError("regen_power_floor must be negative")


def wheel_power(v: float, a: float, params: VehicleParams, grade: float = 0.0) -> float:
    m = params.mass
    force = (
        m * a
        + 0.5 * params.air_density * params.drag_area * v * v
        + m * params.gravity * params.rolling_coeff
        + m * params.gravity * grade
    )
    return v * force


def traction_power(v: float, a: float, params: VehicleParams, grade: float = 0.0) -> float:
    """Battery-side traction power in W (negative while regenerating).

    ``grade`` is the road slope (rise over run); zero by default.
    """
    if v < 0:
        raise DomainError(f"negative speed {v} m/s")
    p_wheel = wheel_power(v, a, params, grade)
    if p_wheel >= 0:
        return p_wheel / params.driveline_efficiency
    return max(params.regen_power_floor, p_wheel * params.regen_efficiency)


def demand_from_speeds(speeds: np.ndarray, dt: float, params: VehicleParams) -> np.ndarray:
    """Per-sample traction power with forward-difference acceleration.

    The final sample is evaluated at zero acceleration.
    """
    v = np.asarray(speeds, dtype=float)
    if v.size == 0:
        raise ValueError("empty speed series")
    if np.any(v < 0):
        raise DomainError("negative speed in series")
    a = np.zeros_like(v)
    a[:-1] = np.diff(v) / dt
    m = params.mass
    force = m * a + 0.5 * params.air_density * params.drag_area * v * v + m * params.gravity * params.rolling_coeff
    p_wheel = v * force
    return np.where(
        p_wheel >= 0,
        p_wheel / params.driveline_efficiency,
        np.maximum(params.regen_power_floor, p_wheel * params.regen_efficiency),
    )


def demand_profile(cycle, params: VehicleParams) -> np.ndarray:
    """Traction power series for a :class:`~btmpc.cycles.DriveCycle`."""
    return demand_from_speeds(cycle.speeds, cycle.dt, params)
