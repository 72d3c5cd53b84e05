"""Lumped electro-thermal battery pack model.

The pack is a single thermal mass heated by ohmic losses and cooled by a
commanded heat-flow rate ``qdot`` (W, always <= 0). The electrical side is an
open-circuit voltage behind an internal resistance, both functions of state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Tuple


class DomainError(ValueError):
    """Input outside the modelled domain (e.g. heating requested)."""


class PowerLimitError(ValueError):
    """Power demand exceeds what the pack can deliver (U_oc^2 / 4R)."""


class CurrentModel(enum.Enum):
    EXACT = "exact"
    SOC_APPROX = "soc_approx"
    THERMAL_APPROX = "thermal_approx"


@dataclass(frozen=True)
class ModelPair:
    """Current models feeding the thermal and SOC equations respectively."""

    thermal: CurrentModel = CurrentModel.EXACT
    soc: CurrentModel = CurrentModel.EXACT


EXACT_PAIR = ModelPair(CurrentModel.EXACT, CurrentModel.EXACT)
REDUCED_PAIR = ModelPair(CurrentModel.THERMAL_APPROX, CurrentModel.SOC_APPROX)


@dataclass(frozen=True)
class OcvMap:
    """Affine open-circuit voltage ``U_oc(SOC) = v0 + slope * SOC``."""

    v0: float = 320.0
    slope: float = 60.0

    def __call__(self, soc: float) -> float:
        return self.v0 + self.slope * soc

    def derivative(self, soc: float) -> float:
        return self.slope


@dataclass(frozen=True)
class ResistanceMap:
    """Pack resistance ``r0 (1 + soc_coef (1 - SOC)) (1 + temp_coef (t_ref - T))``.

    Floored at ``floor`` ohms.
    """

    r0: float = 0.375
    soc_coef: float = 0.3
    temp_coef: float = 0.005
    t_ref: float = 25.0
    floor: float = 0.05

    def __call__(self, soc: float, t_bat: float) -> float:
        r = self.r0 * (1.0 + self.soc_coef * (1.0 - soc)) * (1.0 + self.temp_coef * (self.t_ref - t_bat))
        return max(self.floor, r)

    def partials(self, soc: float, t_bat: float) -> Tuple[float, float]:
        """Return ``(dR/dSOC, dR/dT)``; zero where the floor is active."""
        a = 1.0 + self.soc_coef * (1.0 - soc)
        b = 1.0 + self.temp_coef * (self.t_ref - t_bat)
        if self.r0 * a * b <= self.floor:
            return 0.0, 0.0
        return -self.r0 * self.soc_coef * b, -self.r0 * a * self.temp_coef


@dataclass(frozen=True)
class BatteryParams:
    lumped_heat_capacity: float = 3.5e4  # J/K, m_bat * C_th
    nominal_capacity: float = 270_000.0  # A*s (75 Ah)
    cooling_coefficient: float = -1.0  # a_c, P_temp = a_c * qdot
    ocv_map: OcvMap = field(default_factory=OcvMap)
    resistance_map: ResistanceMap = field(default_factory=ResistanceMap)
    qdot_min: float = -3000.0
    qdot_max: float = 0.0
    t_lower: float = 20.0
    t_upper: float = 40.0
    soc_lower: float = 0.30
    soc_upper: float = 0.90

    def __post_init__(self):
        if not self.cooling_coefficient < 0:
            raise ValueError("cooling_coefficient must be negative")
        if not self.lumped_heat_capacity > 0:
            raise ValueError("lumped_heat_capacity must be positive")
        if not self.nominal_capacity > 0:
            raise ValueError("nominal_capacity must be positive")
        if not (self.qdot_min < self.qdot_max == 0.0):
            raise ValueError("require qdot_min < qdot_max == 0")
        if min(self.ocv_map(0.0), self.ocv_map(1.0)) <= 0:
            raise ValueError("ocv_map must be positive on [0, 1]")
        if self.resistance_map.floor <= 0:
            raise ValueError("resistance_map floor must be positive")
        if not (self.t_lower < self.t_upper and self.soc_lower < self.soc_upper):
            raise ValueError("state bounds must be ordered")


@dataclass(frozen=True)
class BatteryState:
    t_bat: float  # degC
    soc: float  # fraction

    def __post_init__(self):
        if not math.isfinite(self.t_bat):
            raise ValueError("t_bat must be finite")
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"soc {self.soc} outside [0, 1]")


@dataclass(frozen=True)
class PowerRequest:
    p_trac: float
    qdot: float

    def validate(self, params: BatteryParams) -> None:
        if not params.qdot_min <= self.qdot <= 0.0:
            raise DomainError(f"qdot {self.qdot} W outside [{params.qdot_min}, 0]")


def cooling_power(qdot: float, params: BatteryParams) -> float:
    """Electrical power drawn by the cooling system for heat-flow rate ``qdot``."""
    if qdot > 0:
        raise DomainError(f"heating (qdot={qdot} W > 0) is not modelled")
    return params.cooling_coefficient * qdot + 0.0  # no negative zero


def _ocv_and_resistance(state: BatteryState, params: BatteryParams) -> Tuple[float, float]:
    return params.ocv_map(state.soc), params.resistance_map(state.soc, state.t_bat)


def current_exact(p_total: float, u_oc: float, r: float) -> float:
    disc = u_oc * u_oc - 4.0 * r * p_total
    if disc < 0:
        raise PowerLimitError(
            f"demand {p_total:.1f} W exceeds deliverable {u_oc * u_oc / (4.0 * r):.1f} W"
        )
    return (u_oc - math.sqrt(disc)) / (2.0 * r)


def battery_current_exact(p_total: float, state: BatteryState, params: BatteryParams) -> float:
    """Smaller root of ``I (U_oc - I R) = p_total``."""
    u_oc, r = _ocv_and_resistance(state, params)
    return current_exact(p_total, u_oc, r)


def battery_current_soc_approx(p_total: float, state: BatteryState, params: BatteryParams) -> float:
    """Second-order expansion of the exact current in ``p_total``."""
    u_oc, r = _ocv_and_resistance(state, params)
    return p_total / u_oc + r * p_total * p_total / u_oc**3


def battery_current_thermal_approx(p_total: float, state: BatteryState, params: BatteryParams) -> float:
    u_oc = params.ocv_map(state.soc)
    return p_total / u_oc


_CURRENT = {
    CurrentModel.EXACT: battery_current_exact,
    CurrentModel.SOC_APPROX: battery_current_soc_approx,
    CurrentModel.THERMAL_APPROX: battery_current_thermal_approx,
}


def battery_current(model: CurrentModel, p_total: float, state: BatteryState, params: BatteryParams) -> float:
    return _CURRENT[model](p_total, state, params)


def total_power(p_trac: float, qdot: float, params: BatteryParams) -> float:
    return p_trac + cooling_power(qdot, params)


def thermal_rate(
    state: BatteryState,
    p_trac: float,
    qdot: float,
    params: BatteryParams,
    current_model: CurrentModel = CurrentModel.EXACT,
) -> float:
    """dT/dt in K/s: ohmic heating plus (negative) cooling over the lumped capacity."""
    current = battery_current(current_model, total_power(p_trac, qdot, params), state, params)
    r = params.resistance_map(state.soc, state.t_bat)
    return (current * current * r + qdot) / params.lumped_heat_capacity


def soc_rate(
    state: BatteryState,
    p_trac: float,
    qdot: float,
    params: BatteryParams,
    current_model: CurrentModel = CurrentModel.EXACT,
) -> float:
    current = battery_current(current_model, total_power(p_trac, qdot, params), state, params)
    return -current / params.nominal_capacity


def step(
    state: BatteryState,
    p_trac: float,
    qdot: float,
    dt: float,
    params: BatteryParams,
    model_pair: ModelPair = EXACT_PAIR,
) -> Tuple[BatteryState, bool]:
    """Advance one forward-Euler step.

    Returns the new state and a flag that is True when SOC had to be
    clamped to [0, 1].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_dot = thermal_rate(state, p_trac, qdot, params, model_pair.thermal)
    s_dot = soc_rate(state, p_trac, qdot, params, model_pair.soc)
    soc = state.soc + dt * s_dot
    saturated = soc < 0.0 or soc > 1.0
    soc = min(1.0, max(0.0, soc))
    return BatteryState(state.t_bat + dt * t_dot, soc), saturated


def large_pack_params(**overrides) -> BatteryParams:
    """Heavier, lower-loss pack: C_lump=1e5 J/K, a_c=-0.5, R0=0.15 ohm.

    Over an urban cycle this pack warms by well under one kelvin, so the
    package defaults use a smaller, lossier pack instead.
    """
    base = BatteryParams(
        lumped_heat_capacity=1.0e5,
        cooling_coefficient=-0.5,
        resistance_map=ResistanceMap(r0=0.15),
    )
    return replace(base, **overrides)
