"""Cooling controllers: on/off baseline, single-layer NMPC, two-layer MPC.

The two-layer scheme runs a slow scheduling MPC on a reduced model over a
long, flow-speed based preview and hands its temperature/SOC plan to a fast
piloting MPC that tracks it with the exact model over a short, exact
preview. Online constraint handling (IOCH) tightens the scheduled upper
temperature bound when the measured pack is over its limit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .battery import EXACT_PAIR, REDUCED_PAIR, BatteryParams, BatteryState
from .cycles import DriveCycle, FlowProfile, PreviewMode, SpeedPreview, build_flow_profile, preview
from .ocp import (
    CostForm,
    InfeasibleError,
    OcpProblem,
    OcpSolution,
    SlackSpec,
    SolverConfig,
    StateBounds,
    solve,
    warmup,
)
from .traction import VehicleParams, demand_from_speeds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RuleBasedConfig:
    setpoint: float = 35.0
    hysteresis_halfwidth: float = 0.5
    on_qdot: float = -3000.0

    def __post_init__(self):
        if not self.hysteresis_halfwidth > 0:
            raise ValueError("hysteresis_halfwidth must be positive")
        if not -3000.0 <= self.on_qdot < 0:
            raise ValueError("on_qdot must lie in [-3000, 0)")


@dataclass(frozen=True)
class MpcConfig:
    """Horizons are in seconds except ``horizon`` (single-layer steps)."""

    horizon: int = 180
    sample_time: float = 1.0
    long_horizon: float = 180.0
    long_step: float = 5.0
    short_horizon: float = 15.0
    tracking_weight: float = 1e4
    ioch_enabled: bool = True
    ioch_weight: float = 1.0e6
    ioch_eps_max: float = 5.0
    temperature_backoff: float = 0.0
    preview_mode: PreviewMode = PreviewMode.EXACT_FULL_CYCLE
    exact_span: float = 15.0
    blend_span: float = 15.0
    flow_window: float = 250.0

    def __post_init__(self):
        if self.horizon <= 0 or self.long_horizon <= 0 or self.short_horizon <= 0:
            raise ValueError("horizons must be positive")
        if self.short_horizon > self.long_horizon:
            raise ValueError("short_horizon must not exceed long_horizon")
        ratio = self.long_step / self.sample_time
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("long_step / sample_time must be a positive integer")
        steps = self.long_horizon / self.long_step
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("long_horizon must be a multiple of long_step")

    @property
    def rate_ratio(self) -> int:
        return int(round(self.long_step / self.sample_time))

    @property
    def long_steps(self) -> int:
        return int(round(self.long_horizon / self.long_step))

    @property
    def short_steps(self) -> int:
        return int(round(self.short_horizon / self.sample_time))


@dataclass
class Schedule:
    """Piecewise-constant temperature/SOC plan from the scheduling layer."""

    origin_time: float
    step: float
    t_ref: np.ndarray
    soc_ref: np.ndarray
    epsilon: Optional[np.ndarray] = None
    t_bound: Optional[np.ndarray] = None  # bound the plan was solved against, per knot
    residual: float = 0.0
    solution: Optional[OcpSolution] = None

    def __post_init__(self):
        if len(self.t_ref) != len(self.soc_ref):
            raise ValueError("t_ref and soc_ref must have equal length")

    def index(self, t: float) -> int:
        """Knot held over the block containing ``t``.

        Each block ``(t_j, t_j+1]`` holds the plan's value at its end knot,
        i.e. the state the plan is steering toward, so the piloting layer
        is not pulled back to the measurement the plan started from.
        """
        i = int(math.ceil((t - self.origin_time) / self.step - 1e-9))
        return min(max(i, 1), len(self.t_ref) - 1)

    def reference(self, t: float):
        i = self.index(t)
        return float(self.t_ref[i]), float(self.soc_ref[i])

    def references(self, t0: float, n: int, dt: float):
        idx = [self.index(t0 + j * dt) for j in range(n)]
        return self.t_ref[idx], self.soc_ref[idx]

    def bound_excess(self, t_upper: float) -> float:
        """Largest excess of the planned temperatures over their bound (knots >= 1)."""
        eps = np.zeros(len(self.t_ref)) if self.epsilon is None else np.concatenate([[0.0], self.epsilon])
        excess = self.t_ref[1:] - (t_upper - eps[1:])
        return float(max(0.0, np.max(excess))) if excess.size else 0.0


@dataclass
class IochState:
    delta_now: float = 0.0
    epsilon_traj: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.delta_now < 0 or np.any(np.asarray(self.epsilon_traj) < 0):
            raise ValueError("IOCH quantities must be nonnegative")


@dataclass
class StepDiagnostics:
    solve_time: float = 0.0
    status: str = ""
    cost: float = float("nan")
    iterations: int = 0
    fallback: bool = False
    solution: Optional[OcpSolution] = None


def rule_based_step(state: BatteryState, config: RuleBasedConfig, prev_on: bool):
    """On/off cooling with hysteresis around the setpoint."""
    if state.t_bat > config.setpoint + config.hysteresis_halfwidth:
        on = True
    elif state.t_bat < config.setpoint - config.hysteresis_halfwidth:
        on = False
    else:
        on = prev_on
    return (config.on_qdot if on else 0.0), on


def ioch_delta(t_bat: float, t_upper: float) -> float:
    """Measured excess over the upper temperature limit (zero when within)."""
    return 0.0 if t_bat <= t_upper else t_bat - t_upper


def _fallback_qdot(state: BatteryState, params: BatteryParams) -> float:
    return params.qdot_min if state.t_bat > params.t_upper else 0.0


def _shift(seq: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    """Receding-horizon warm start: drop the applied input, repeat the last."""
    if seq is None or len(seq) == 0:
        return None
    out = np.empty(n)
    tail = np.asarray(seq[1:], dtype=float)
    m = min(n, tail.size)
    out[:m] = tail[:m]
    out[m:] = seq[-1]
    return out


def preview_demand(spd: SpeedPreview, vehicle: VehicleParams) -> np.ndarray:
    """Traction power for each of the preview's ``horizon_steps`` intervals."""
    return demand_from_speeds(spd.speeds, spd.step, vehicle)[: spd.horizon_steps]


def single_layer_mpc_step(
    state: BatteryState,
    spd: SpeedPreview,
    config: MpcConfig,
    params: BatteryParams,
    vehicle: VehicleParams,
    solver: SolverConfig = SolverConfig(),
    warm_start: Optional[np.ndarray] = None,
):
    """Economic NMPC over ``config.horizon`` steps; returns the first input."""
    n = config.horizon
    if spd.horizon_steps < n:
        raise ValueError("preview shorter than the MPC horizon")
    problem = OcpProblem(
        horizon_steps=n,
        step=config.sample_time,
        initial_state=state,
        p_trac_preview=preview_demand(spd, vehicle)[:n],
        params=params,
        model_pair=EXACT_PAIR,
        cost_form=CostForm.ECONOMIC,
        state_bounds=StateBounds.from_params(params, config.temperature_backoff),
    )
    try:
        sol = solve(problem, warm_start, solver)
    except InfeasibleError:
        log.warning("single-layer MPC infeasible at T=%.2f; falling back", state.t_bat)
        return _fallback_qdot(state, params), StepDiagnostics(status="fault", fallback=True)
    diag = StepDiagnostics(sol.solve_time, sol.status.value, sol.cost, sol.iterations, False, sol)
    return float(sol.qdot_seq[0]), diag


def _block_average(values: np.ndarray, ratio: int, blocks: int) -> np.ndarray:
    return values[: ratio * blocks].reshape(blocks, ratio).mean(axis=1)


def scheduling_step(
    state: BatteryState,
    flow_preview: SpeedPreview,
    config: MpcConfig,
    ioch: IochState,
    params: BatteryParams,
    vehicle: VehicleParams,
    solver: SolverConfig = SolverConfig(),
    origin_time: float = 0.0,
    previous: Optional[Schedule] = None,
) -> Schedule:
    """Long-horizon economic MPC on the reduced model at the slow rate.

    ``flow_preview`` may be sampled at the slow step directly or at the fast
    step covering the same window; in the latter case traction power is
    averaged over each slow interval. The plan starts from the measured
    temperature capped at the upper limit: the plan itself must stay
    admissible, and measured excess is fed back through ``ioch``.
    """
    nl = config.long_steps
    if flow_preview.step == config.long_step:
        p_long = preview_demand(flow_preview, vehicle)[:nl]
    else:
        ratio = int(round(config.long_step / flow_preview.step))
        p_fine = preview_demand(flow_preview, vehicle)
        if p_fine.size < ratio * nl:
            raise ValueError("flow preview does not cover the long horizon")
        p_long = _block_average(p_fine, ratio, nl)

    plan_start = BatteryState(min(state.t_bat, params.t_upper), state.soc)
    bounds = StateBounds.from_params(params, config.temperature_backoff)
    use_slack = config.ioch_enabled and ioch.delta_now > 0.0
    slack = SlackSpec(config.ioch_weight, ioch.delta_now, config.ioch_eps_max) if use_slack else None
    problem = OcpProblem(
        horizon_steps=nl,
        step=config.long_step,
        initial_state=plan_start,
        p_trac_preview=p_long,
        params=params,
        model_pair=REDUCED_PAIR,
        cost_form=CostForm.ECONOMIC_WITH_SLACK if use_slack else CostForm.ECONOMIC,
        state_bounds=bounds,
        slack=slack,
    )
    warm = warm_eps = None
    if previous is not None and previous.solution is not None:
        warm = _shift(previous.solution.qdot_seq, nl)
        if use_slack:
            warm_eps = _shift(previous.solution.slack_seq, nl)
    sol = solve(problem, warm, solver, warm_slack=warm_eps)
    eps = sol.slack_seq if use_slack else np.zeros(nl)
    t_bound = np.concatenate([[params.t_upper], params.t_upper - eps])
    return Schedule(
        origin_time=origin_time,
        step=config.long_step,
        t_ref=sol.temperatures,
        soc_ref=sol.socs,
        epsilon=eps,
        t_bound=t_bound,
        residual=sol.violation,
        solution=sol,
    )


def pilot_step(
    state: BatteryState,
    exact_preview: SpeedPreview,
    schedule: Schedule,
    config: MpcConfig,
    params: BatteryParams,
    vehicle: VehicleParams,
    solver: SolverConfig = SolverConfig(),
    now: float = 0.0,
    warm_start: Optional[np.ndarray] = None,
    tracking_weight: Optional[float] = None,
):
    """Short-horizon tracking MPC with the exact model and input bounds only."""
    ns = config.short_steps
    t_ref, soc_ref = schedule.references(now, ns + 1, config.sample_time)
    problem = OcpProblem(
        horizon_steps=ns,
        step=config.sample_time,
        initial_state=state,
        p_trac_preview=preview_demand(exact_preview, vehicle)[:ns],
        params=params,
        model_pair=EXACT_PAIR,
        cost_form=CostForm.TRACKING,
        t_ref=t_ref,
        soc_ref=soc_ref,
        tracking_weight=config.tracking_weight if tracking_weight is None else tracking_weight,
    )
    try:
        sol = solve(problem, warm_start, solver)
    except InfeasibleError:
        log.warning("piloting MPC infeasible at T=%.2f; falling back", state.t_bat)
        return _fallback_qdot(state, params), StepDiagnostics(status="fault", fallback=True)
    return float(sol.qdot_seq[0]), StepDiagnostics(sol.solve_time, sol.status.value, sol.cost, sol.iterations, False, sol)


@dataclass
class TwoLayerMemory:
    """State carried between two-layer steps."""

    last_schedule: Optional[Schedule] = None
    countdown: int = 0
    pilot_warm: Optional[np.ndarray] = None


@dataclass
class TwoLayerOutput:
    qdot: float
    scheduled: bool
    schedule: Schedule
    pilot: StepDiagnostics
    schedule_time: float = 0.0
    delta: float = 0.0


def two_layer_step(
    state: BatteryState,
    flow_preview_fn,
    exact_preview: SpeedPreview,
    config: MpcConfig,
    memory: TwoLayerMemory,
    params: BatteryParams,
    vehicle: VehicleParams,
    solver: SolverConfig = SolverConfig(),
    now: float = 0.0,
):
    """One fast-rate tick of the hierarchy.

    ``flow_preview_fn`` is called (with no arguments) only when the
    scheduling layer is due, so the long preview is built lazily.
    """
    if not 0 <= memory.countdown < config.rate_ratio + 1:
        raise ValueError("countdown outside [0, rate_ratio]")
    scheduled = False
    sched_time = 0.0
    delta = 0.0
    if memory.last_schedule is None or memory.countdown == 0:
        delta = ioch_delta(state.t_bat, params.t_upper) if config.ioch_enabled else 0.0
        schedule = scheduling_step(
            state, flow_preview_fn(), config, IochState(delta), params, vehicle, solver,
            origin_time=now, previous=memory.last_schedule,
        )
        sched_time = schedule.solution.solve_time if schedule.solution else 0.0
        memory = replace(memory, last_schedule=schedule, countdown=config.rate_ratio)
        scheduled = True
    qdot, diag = pilot_step(
        state, exact_preview, memory.last_schedule, config, params, vehicle, solver, now,
        warm_start=memory.pilot_warm,
    )
    warm = _shift(diag.solution.qdot_seq, config.short_steps) if diag.solution is not None else None
    memory = replace(memory, countdown=memory.countdown - 1, pilot_warm=warm)
    return TwoLayerOutput(qdot, scheduled, memory.last_schedule, diag, sched_time, delta), memory


# ---------------------------------------------------------------------------
# closed-loop controller objects


@dataclass
class DrivingContext:
    """Everything a controller may look at besides the measured state."""

    cycle: DriveCycle
    flow: FlowProfile
    vehicle: VehicleParams
    params: BatteryParams

    @classmethod
    def build(cls, cycle: DriveCycle, vehicle: VehicleParams, params: BatteryParams, flow_window: float = 250.0):
        return cls(cycle, build_flow_profile(cycle, flow_window), vehicle, params)


@dataclass
class Action:
    qdot: float
    t_ref: float = float("nan")
    soc_ref: float = float("nan")
    epsilon: float = float("nan")
    solve_time_single: float = float("nan")
    solve_time_schedule: float = float("nan")
    solve_time_pilot: float = float("nan")
    status: str = ""
    schedule_residual: float = float("nan")
    schedule_excess: float = float("nan")


class RuleBasedController:
    label = "rule"

    def __init__(self, config: RuleBasedConfig = RuleBasedConfig()):
        self.config = config
        self.on = False

    def reset(self, context: DrivingContext) -> None:
        self.on = False

    def act(self, k: int, state: BatteryState) -> Action:
        qdot, self.on = rule_based_step(state, self.config, self.on)
        return Action(qdot, status="on" if self.on else "off")


class SingleLayerController:
    def __init__(self, config: MpcConfig = MpcConfig(), solver: SolverConfig = SolverConfig()):
        self.config = config
        self.solver = solver
        self.label = f"single_N{config.horizon}" + ("_flow" if config.preview_mode is PreviewMode.EXACT_SHORT_THEN_FLOW else "")
        self.context: Optional[DrivingContext] = None
        self.warm = None

    def reset(self, context: DrivingContext) -> None:
        warmup()
        self.context = context
        self.warm = None

    def act(self, k: int, state: BatteryState) -> Action:
        c, ctx = self.config, self.context
        spd = preview(ctx.cycle, ctx.flow, k, c.horizon, c.sample_time, c.exact_span, c.blend_span, c.preview_mode)
        qdot, diag = single_layer_mpc_step(state, spd, c, ctx.params, ctx.vehicle, self.solver, self.warm)
        self.warm = _shift(diag.solution.qdot_seq, c.horizon) if diag.solution is not None else None
        return Action(qdot, solve_time_single=diag.solve_time, status=diag.status)


class TwoLayerController:
    def __init__(self, config: MpcConfig = MpcConfig(), solver: SolverConfig = SolverConfig()):
        self.config = config
        self.solver = solver
        self.label = "two_layer" if config.ioch_enabled else "two_layer_noioch"
        self.context: Optional[DrivingContext] = None
        self.memory = TwoLayerMemory()

    def reset(self, context: DrivingContext) -> None:
        warmup()
        self.context = context
        self.memory = TwoLayerMemory()

    def act(self, k: int, state: BatteryState) -> Action:
        c, ctx = self.config, self.context
        ts = c.sample_time
        exact = preview(ctx.cycle, ctx.flow, k, c.short_steps, ts, mode=PreviewMode.EXACT_FULL_CYCLE)

        def flow_preview():
            steps = int(round(c.long_horizon / ts))
            return preview(ctx.cycle, ctx.flow, k, steps, ts, c.exact_span, c.blend_span,
                           PreviewMode.EXACT_SHORT_THEN_FLOW)

        out, self.memory = two_layer_step(state, flow_preview, exact, c, self.memory, ctx.params, ctx.vehicle,
                                          self.solver, now=k * ctx.cycle.dt)
        sched = out.schedule
        t_ref, soc_ref = sched.reference(k * ctx.cycle.dt)
        eps = float(sched.epsilon[0]) if sched.epsilon is not None and sched.epsilon.size else 0.0
        return Action(
            out.qdot,
            t_ref=t_ref,
            soc_ref=soc_ref,
            epsilon=eps,
            solve_time_schedule=out.schedule_time if out.scheduled else float("nan"),
            solve_time_pilot=out.pilot.solve_time,
            status=out.pilot.status,
            schedule_residual=sched.residual if out.scheduled else float("nan"),
            schedule_excess=sched.bound_excess(ctx.params.t_upper) if out.scheduled else float("nan"),
        )
