"""Independent checks: grid-search OCP oracle and the plant property suite.

Everything here goes through the pure-Python stepper in :mod:`btmpc.battery`
and never through the compiled solver kernels, so it can serve as a second
route against which the optimizer is compared.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .battery import (
    BatteryParams,
    BatteryState,
    battery_current_exact,
    battery_current_soc_approx,
    battery_current_thermal_approx,
    step,
)
from .ocp import CostForm, OcpProblem, SlackSpec, StateBounds, rollout, solve, verify_gradient


@dataclass
class OracleResult:
    qdot_seq: np.ndarray
    slack_seq: Optional[np.ndarray]
    cost: float
    evaluated: int


def grid_search(
    problem: OcpProblem,
    penalty_weight: float,
    levels: int = 5,
    slack_levels: Optional[np.ndarray] = None,
) -> OracleResult:
    """Exhaustive search over ``levels`` evenly spaced inputs per step.

    With slack enabled, ``slack_levels`` (default: 5 values spanning the slack
    box plus the measured delta) are enumerated per step as well. Costs come
    from :func:`btmpc.ocp.rollout` at the given penalty weight.
    """
    lo, hi = problem.input_bounds
    q_grid = np.linspace(lo, hi, levels)
    n = problem.horizon_steps
    best = None
    count = 0
    if problem.has_slack:
        if slack_levels is None:
            slack_levels = np.unique(np.concatenate(
                [np.linspace(0.0, problem.slack.upper, 5), [problem.slack.delta_now]]))
        e_choices = list(itertools.product(slack_levels, repeat=n))
    else:
        e_choices = [None]
    for q in itertools.product(q_grid, repeat=n):
        q = np.array(q)
        for e in e_choices:
            e_arr = None if e is None else np.array(e)
            try:
                cost = rollout(problem, q, e_arr, penalty_weight).penalized_cost
            except ValueError:
                continue
            count += 1
            if best is None or cost < best.cost:
                best = OracleResult(q, e_arr, cost, 0)
    if best is None or not np.isfinite(best.cost):
        raise ValueError("every grid point violates the pack power limit")
    best.evaluated = count
    return best


def random_desk_problem(rng: np.random.Generator, cost_form: CostForm, params: BatteryParams = BatteryParams(),
                        horizon: int = 3) -> OcpProblem:
    """A short random OCP instance with states near the temperature limits."""
    t0 = float(rng.uniform(36.0, 41.0))
    soc0 = float(rng.uniform(0.35, 0.9))
    step_size = float(rng.choice([1.0, 5.0]))
    p = rng.uniform(-20e3, 50e3, horizon)
    kwargs = {}
    if cost_form is CostForm.TRACKING:
        kwargs = dict(t_ref=t0 + rng.uniform(-2.0, 1.0, horizon + 1),
                      soc_ref=soc0 + rng.uniform(-2e-3, 1e-3, horizon + 1))
        bounds = None
    else:
        bounds = StateBounds.from_params(params)
    if cost_form is CostForm.ECONOMIC_WITH_SLACK:
        kwargs["slack"] = SlackSpec(weight=float(10 ** rng.uniform(1, 6)),
                                    delta_now=float(rng.uniform(0.0, 2.0)), upper=5.0)
    return OcpProblem(
        horizon_steps=horizon,
        step=step_size,
        initial_state=BatteryState(t0, soc0),
        p_trac_preview=p,
        params=params,
        cost_form=cost_form,
        state_bounds=bounds,
        **kwargs,
    )


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_quadratic_root(params: BatteryParams = BatteryParams(), samples: int = 2000, seed: int = 0) -> CheckResult:
    """I (U - I R) = P for the exact current, relative to max(|P|, 1)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        state = BatteryState(float(rng.uniform(0, 50)), float(rng.uniform(0, 1)))
        u = params.ocv_map(state.soc)
        r = params.resistance_map(state.soc, state.t_bat)
        p = float(rng.uniform(-60e3, 0.95 * u * u / (4 * r)))
        i = battery_current_exact(p, state, params)
        worst = max(worst, abs(i * (u - i * r) - p) / max(abs(p), 1.0))
    return CheckResult("quadratic-root identity", worst <= 1e-9, f"max rel residual {worst:.2e}")


def check_taylor_hierarchy(params: BatteryParams = BatteryParams(), points: int = 501) -> CheckResult:
    """Second-order current error never exceeds first-order error on [0, 50] kW."""
    bad = 0
    worst_ratio = 0.0
    for soc in (0.3, 0.6, 0.9):
        for t in (20.0, 30.0, 40.0):
            state = BatteryState(t, soc)
            for p in np.linspace(0.0, 50e3, points):
                exact = battery_current_exact(p, state, params)
                e2 = abs(exact - battery_current_soc_approx(p, state, params))
                e1 = abs(exact - battery_current_thermal_approx(p, state, params))
                if e2 > e1:
                    bad += 1
                if e1 > 0:
                    worst_ratio = max(worst_ratio, e2 / e1)
    return CheckResult("Taylor error hierarchy", bad == 0, f"max |e2|/|e1| = {worst_ratio:.3f}, violations {bad}")


def euler_error_ratio(params: BatteryParams = BatteryParams(), dt: float = 20.0, duration: float = 400.0,
                      p_trac: float = 40e3, qdot: float = -1000.0) -> float:
    """Global error ratio e(dt) / e(dt/2) against a fine-step reference."""

    def integrate(h):
        state = BatteryState(25.0, 0.9)
        for _ in range(int(round(duration / h))):
            state, _ = step(state, p_trac, qdot, h, params)
        return np.array([state.t_bat, state.soc])

    ref = integrate(dt / 512)
    scale = np.array([1.0, 100.0])  # weigh SOC so both states matter
    e1 = np.linalg.norm((integrate(dt) - ref) * scale)
    e2 = np.linalg.norm((integrate(dt / 2) - ref) * scale)
    return float(e1 / e2)


def check_euler_order(params: BatteryParams = BatteryParams()) -> CheckResult:
    ratio = euler_error_ratio(params)
    return CheckResult("Euler order of accuracy", abs(ratio - 2.0) <= 0.2, f"error ratio {ratio:.3f}")


def replay_error(result, params: BatteryParams = BatteryParams()) -> float:
    """Largest difference between logged states and an open-loop replay."""
    from .sim import replay

    states = replay(result, params)
    logged = np.column_stack([result.log["t_bat"], result.log["soc"]])
    final = np.array([[result.final.t_bat, result.final.soc]])
    return float(np.max(np.abs(states - np.vstack([logged, final]))))


def check_replay(params: BatteryParams = BatteryParams()) -> CheckResult:
    from .controllers import RuleBasedController
    from .cycles import bundled_cycle
    from .sim import run_closed_loop

    res = run_closed_loop(bundled_cycle("udds"), RuleBasedController(), BatteryState(39.0, 0.9), params)
    err = replay_error(res, params)
    return CheckResult("open-loop replay", err <= 1e-10, f"max state difference {err:.1e}")


def check_oracle(instances: int = 100, seed: int = 1, params: BatteryParams = BatteryParams()) -> CheckResult:
    """Solver penalized cost against the 5-level grid over 3-step instances."""
    rng = np.random.default_rng(seed)
    forms = (CostForm.ECONOMIC, CostForm.TRACKING, CostForm.ECONOMIC_WITH_SLACK)
    worst = -np.inf
    for k in range(instances):
        problem = random_desk_problem(rng, forms[k % 3], params)
        sol = solve(problem)
        oracle = grid_search(problem, sol.penalty_weight)
        worst = max(worst, sol.cost - oracle.cost)
    return CheckResult("grid-search oracle", bool(worst <= 1e-6), f"max (solver - oracle) cost {worst:.3e}")


def check_gradients(points: int = 50, seed: int = 2, params: BatteryParams = BatteryParams(),
                    horizon: int = 8) -> CheckResult:
    """Adjoint gradient vs central differences at random interior points."""
    rng = np.random.default_rng(seed)
    worst = {}
    for form in (CostForm.ECONOMIC, CostForm.TRACKING, CostForm.ECONOMIC_WITH_SLACK):
        w = 0.0
        for _ in range(points):
            problem = random_desk_problem(rng, form, params, horizon)
            q = rng.uniform(-2900.0, -100.0, horizon)
            eps = rng.uniform(0.1, 4.9, horizon) if problem.has_slack else None
            w = max(w, verify_gradient(problem, q, eps))
        worst[form.value] = w
    ok = all(v <= 1e-4 for v in worst.values())
    return CheckResult("adjoint gradient", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


SUITE: List[Callable[[], CheckResult]] = [
    check_quadratic_root,
    check_taylor_hierarchy,
    check_euler_order,
    check_replay,
    check_gradients,
    check_oracle,
]


def run_suite(params: BatteryParams = BatteryParams()) -> List[CheckResult]:
    return [check(params=params) for check in SUITE]
