import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from btmpc.battery import REDUCED_PAIR, BatteryParams, BatteryState, step
from btmpc.controllers import (
    DrivingContext,
    IochState,
    MpcConfig,
    RuleBasedConfig,
    Schedule,
    SingleLayerController,
    TwoLayerController,
    TwoLayerMemory,
    ioch_delta,
    pilot_step,
    preview_demand,
    rule_based_step,
    scheduling_step,
    single_layer_mpc_step,
    two_layer_step,
)
from btmpc.cycles import PreviewMode, SpeedPreview, build_flow_profile, bundled_cycle, preview
from btmpc.ocp import CostForm, OcpProblem, SlackSpec, StateBounds, rollout, solve
from btmpc.sim import run_closed_loop
from btmpc.traction import VehicleParams
from btmpc.verify import grid_search

P = BatteryParams()
V = VehicleParams()
RULE = RuleBasedConfig()


def spd(speeds, step_size=1.0):
    speeds = np.asarray(speeds, dtype=float)
    return SpeedPreview(0, speeds.size - 1, step_size, speeds, PreviewMode.EXACT_FULL_CYCLE)


def short_config(n=3, **kw):
    base = dict(horizon=n, sample_time=1.0, long_horizon=float(n), long_step=1.0, short_horizon=float(n))
    base.update(kw)
    return MpcConfig(**base)


# rule-based -----------------------------------------------------------------


def test_rule_examples():
    assert rule_based_step(BatteryState(34.0, 0.8), RULE, False) == (0.0, False)
    assert rule_based_step(BatteryState(35.6, 0.8), RULE, False) == (-3000.0, True)
    assert rule_based_step(BatteryState(35.2, 0.8), RULE, True) == (-3000.0, True)
    assert rule_based_step(BatteryState(35.2, 0.8), RULE, False) == (0.0, False)


@given(st.lists(st.floats(0.0, 0.3), min_size=2, max_size=80), st.floats(33.0, 37.0), st.booleans())
def test_rule_no_chattering_on_monotone_segments(steps, start, prev):
    for sign in (1.0, -1.0):
        temps = start + sign * np.cumsum(steps)
        # the first sample may correct an inconsistent initial mode
        _, on = rule_based_step(BatteryState(float(temps[0]), 0.8), RULE, prev)
        switches = 0
        for t in temps[1:]:
            _, new = rule_based_step(BatteryState(float(t), 0.8), RULE, on)
            switches += new != on
            on = new
        assert switches <= 1


def test_rule_config_validation():
    with pytest.raises(ValueError):
        RuleBasedConfig(hysteresis_halfwidth=0.0)
    with pytest.raises(ValueError):
        RuleBasedConfig(on_qdot=0.0)


# IOCH -----------------------------------------------------------------------


def test_ioch_delta_examples():
    assert ioch_delta(39.0, 40.0) == 0.0
    assert ioch_delta(41.0, 40.0) == 1.0
    assert ioch_delta(40.0, 40.0) == 0.0


@given(st.floats(0.0, 60.0), st.floats(0.0, 60.0), st.floats(1e-6, 1.0))
def test_ioch_delta_properties(t, limit, h):
    d = ioch_delta(t, limit)
    assert d >= 0.0
    assert abs(ioch_delta(t + h, limit) - d) <= h + 1e-12
    if t > limit:
        assert ioch_delta(t + h, limit) - d == pytest.approx(h, abs=1e-12)


def test_ioch_state_validation():
    with pytest.raises(ValueError):
        IochState(delta_now=-0.1)
    with pytest.raises(ValueError):
        IochState(0.0, np.array([0.1, -0.1]))


def test_mpc_config_validation():
    cfg = MpcConfig()
    assert (cfg.rate_ratio, cfg.long_steps, cfg.short_steps) == (5, 36, 15)
    for kw in (dict(long_step=2.5), dict(short_horizon=200.0), dict(horizon=0), dict(long_horizon=182.0)):
        with pytest.raises(ValueError):
            MpcConfig(**kw)


# single layer ---------------------------------------------------------------


def test_single_layer_cool_state_zero_preview():
    cfg = short_config(3)
    q, diag = single_layer_mpc_step(BatteryState(25.0, 0.8), spd(np.zeros(4)), cfg, P, V)
    assert q == 0.0 and not diag.fallback
    problem = diag.solution
    oracle = grid_search(OcpProblem(3, 1.0, BatteryState(25.0, 0.8), np.zeros(3), P,
                                    state_bounds=StateBounds.from_params(P)), problem.penalty_weight)
    assert oracle.qdot_seq[0] == 0.0


def test_single_layer_precools_before_surge():
    cfg = short_config(8)
    speeds = [10, 10, 10, 15, 17.5, 17.5, 17.5, 17.5, 17.5]
    state = BatteryState(39.9, 0.8)
    q, diag = single_layer_mpc_step(state, spd(speeds), cfg, P, V)
    assert q < 0.0
    p = preview_demand(spd(speeds), V)
    assert p[3] > 5 * p[0]
    problem = OcpProblem(8, 1.0, state, p, P, state_bounds=StateBounds.from_params(P))
    mu = diag.solution.penalty_weight
    now = diag.solution.qdot_seq
    later = np.concatenate([[0.0], now[1:]])
    assert rollout(problem, now, penalty_weight=mu).penalized_cost < rollout(problem, later, penalty_weight=mu).penalized_cost


def test_single_layer_preview_too_short():
    with pytest.raises(ValueError):
        single_layer_mpc_step(BatteryState(30.0, 0.8), spd(np.zeros(3)), short_config(3), P, V)


@given(st.floats(20.0, 42.0), st.floats(0.35, 0.9), st.lists(st.floats(0.0, 20.0), min_size=6, max_size=6))
def test_single_layer_output_in_box(t0, soc0, speeds):
    q, _ = single_layer_mpc_step(BatteryState(t0, soc0), spd(speeds), short_config(5), P, V)
    assert P.qdot_min <= q <= P.qdot_max


# scheduling -----------------------------------------------------------------


def test_scheduling_without_ioch_is_plain_economic():
    cfg = short_config(3, ioch_enabled=False)
    speeds = [20, 21, 22, 23]
    state = BatteryState(39.5, 0.8)
    sched = scheduling_step(state, spd(speeds), cfg, IochState(0.0), P, V)
    plain = solve(OcpProblem(3, 1.0, state, preview_demand(spd(speeds), V), P, REDUCED_PAIR,
                             state_bounds=StateBounds.from_params(P)))
    np.testing.assert_array_equal(sched.solution.qdot_seq, plain.qdot_seq)
    np.testing.assert_array_equal(sched.epsilon, 0.0)
    on = scheduling_step(state, spd(speeds), short_config(3, ioch_enabled=True), IochState(0.0), P, V)
    np.testing.assert_array_equal(on.solution.qdot_seq, plain.qdot_seq)


def test_scheduling_slack_follows_delta():
    # 20 s scheduling steps leave enough cooling authority to reach 39 C
    cfg = MpcConfig(horizon=3, long_step=20.0, long_horizon=60.0, short_horizon=20.0)
    speeds = np.full(4, 20.0)
    sched = scheduling_step(BatteryState(41.0, 0.8), spd(speeds, 20.0), cfg, IochState(1.0), P, V)
    np.testing.assert_allclose(sched.epsilon, 1.0, atol=0.01)
    assert np.all(sched.t_ref[1:] <= P.t_upper - sched.epsilon + 1e-3)
    assert sched.bound_excess(P.t_upper) <= 1e-3
    sol = sched.solution
    problem = OcpProblem(3, 20.0, BatteryState(40.0, 0.8), preview_demand(spd(speeds, 20.0), V), P, REDUCED_PAIR,
                         cost_form=CostForm.ECONOMIC_WITH_SLACK, state_bounds=StateBounds.from_params(P),
                         slack=SlackSpec(1e6, 1.0, 5.0))
    oracle = grid_search(problem, sol.penalty_weight)
    assert sol.cost <= oracle.cost + 1e-6
    np.testing.assert_array_equal(oracle.slack_seq, 1.0)


def test_scheduled_plan_respects_limit_on_udds_at_39():
    cycle = bundled_cycle("udds")
    flow = build_flow_profile(cycle)
    cfg = MpcConfig()
    fp = preview(cycle, flow, 0, 180, 1.0, mode=PreviewMode.EXACT_SHORT_THEN_FLOW)
    sched = scheduling_step(BatteryState(39.0, 0.9), fp, cfg, IochState(0.0), P, V)
    assert sched.t_ref.size == 37
    assert np.all(sched.t_ref <= 40.0 + sched.residual + 1e-12)
    assert sched.residual <= 0.05


def test_schedule_hold_is_end_knot():
    s = Schedule(10.0, 5.0, np.array([0.0, 1.0, 2.0, 3.0]), np.zeros(4))
    assert [s.index(t) for t in (10.0, 11.0, 15.0, 15.5, 20.0, 25.0, 99.0)] == [1, 1, 1, 2, 2, 3, 3]
    with pytest.raises(ValueError):
        Schedule(0.0, 1.0, np.zeros(3), np.zeros(2))


# piloting -------------------------------------------------------------------


def uncontrolled(state, speeds, n):
    p = preview_demand(spd(speeds), V)
    states = [state]
    for i in range(n):
        states.append(step(states[-1], p[i], 0.0, 1.0, P)[0])
    return np.array([s.t_bat for s in states]), np.array([s.soc for s in states])


def test_pilot_tracks_uncontrolled_schedule_with_zero_input():
    cfg = short_config(5)
    state = BatteryState(37.0, 0.8)
    speeds = [12, 13, 14, 14, 13, 12]
    t_ref, soc_ref = uncontrolled(state, speeds, 5)
    q, diag = pilot_step(state, spd(speeds), Schedule(0.0, 1.0, t_ref, soc_ref), cfg, P, V)
    assert abs(q) <= 1e-3
    # only the fixed initial-state term remains
    t_hold, soc_hold = Schedule(0.0, 1.0, t_ref, soc_ref).reference(0.0)
    const = (state.t_bat - t_hold) ** 2 + cfg.tracking_weight * (state.soc - soc_hold) ** 2
    assert diag.solution.cost == pytest.approx(const, rel=1e-9, abs=1e-12)
    np.testing.assert_allclose(diag.solution.temperatures[1:], t_ref[1:], atol=1e-9)


def test_pilot_cools_hard_for_lower_reference():
    cfg = short_config(3)
    state = BatteryState(38.0, 0.8)
    sched = Schedule(0.0, 1.0, np.full(4, 36.0), np.full(4, 0.8))
    q, diag = pilot_step(state, spd(np.zeros(4)), sched, cfg, P, V)
    assert q == P.qdot_min
    problem = OcpProblem(3, 1.0, state, np.zeros(3), P, cost_form=CostForm.TRACKING,
                         t_ref=np.full(4, 36.0), soc_ref=np.full(4, 0.8))
    oracle = grid_search(problem, 0.0)
    assert oracle.qdot_seq[0] == P.qdot_min


def test_pilot_w1_zero_ignores_soc_reference():
    cfg = short_config(4)
    state = BatteryState(38.0, 0.8)
    speeds = [15, 16, 17, 16, 15]
    t_ref = np.array([38.0, 37.9, 37.9, 37.8, 37.8])
    a = pilot_step(state, spd(speeds), Schedule(0.0, 1.0, t_ref, np.full(5, 0.8)), cfg, P, V, tracking_weight=0.0)
    b = pilot_step(state, spd(speeds), Schedule(0.0, 1.0, t_ref, np.full(5, 0.5)), cfg, P, V, tracking_weight=0.0)
    assert a[0] == b[0]


@given(st.floats(1e2, 1e6), st.floats(-2e-4, 2e-4))
def test_pilot_doubling_w1_does_not_raise_soc_error(w1, dsoc):
    cfg = short_config(4)
    state = BatteryState(38.0, 0.8)
    speeds = [15, 16, 17, 16, 15]
    t_ref, soc_ref = uncontrolled(state, speeds, 4)
    sched = Schedule(0.0, 1.0, t_ref - 0.3, soc_ref + dsoc)

    def soc_err(w):
        _, d = pilot_step(state, spd(speeds), sched, cfg, P, V, tracking_weight=w)
        return float(np.sum((d.solution.socs - sched.references(0.0, 5, 1.0)[1]) ** 2))

    assert soc_err(2 * w1) <= soc_err(w1) * (1 + 1e-6) + 1e-14


# two layer ------------------------------------------------------------------


def test_two_layer_collapses_to_single_layer():
    cfg = short_config(3, ioch_enabled=False)
    for t0, speeds in [(39.99, [25, 25, 25, 25]), (39.995, [18, 18, 18, 18]), (39.985, [22, 23, 24, 25])]:
        state = BatteryState(t0, 0.8)
        q_single, diag = single_layer_mpc_step(state, spd(speeds), cfg, P, V)
        out, _ = two_layer_step(state, lambda: spd(speeds), spd(speeds), cfg, TwoLayerMemory(), P, V)
        assert out.qdot == pytest.approx(q_single, abs=5.0)
        problem = OcpProblem(3, 1.0, state, preview_demand(spd(speeds), V), P,
                             state_bounds=StateBounds.from_params(P))
        assert diag.solution.cost <= grid_search(problem, diag.solution.penalty_weight).cost + 1e-6


def test_two_layer_cadence_and_piecewise_references():
    cycle = bundled_cycle("udds")
    ctl = TwoLayerController(MpcConfig())
    ctl.reset(DrivingContext.build(cycle, V, P))
    state = BatteryState(39.0, 0.9)
    scheduled, refs = [], []
    for k in range(16):
        a = ctl.act(k, state)
        scheduled.append(not math.isnan(a.solve_time_schedule))
        refs.append(a.t_ref)
        assert P.qdot_min <= a.qdot <= P.qdot_max and not math.isnan(a.solve_time_pilot)
        state, _ = step(state, 0.0, a.qdot, 1.0, P)
    assert [k for k, s in enumerate(scheduled) if s] == [0, 5, 10, 15]
    for start in (0, 5, 10):
        assert len(set(refs[start:start + 5])) == 1


def test_two_layer_countdown_validation():
    with pytest.raises(ValueError):
        two_layer_step(BatteryState(30, 0.8), None, spd(np.zeros(4)), short_config(3), TwoLayerMemory(None, 7), P, V)


def test_ioch_idle_run_matches_disabled_run():
    cycle = bundled_cycle("nycc")
    on = run_closed_loop(cycle, TwoLayerController(MpcConfig(ioch_enabled=True)), BatteryState(35.0, 0.9), P)
    off = run_closed_loop(cycle, TwoLayerController(MpcConfig(ioch_enabled=False)), BatteryState(35.0, 0.9), P)
    assert on.log["t_bat"].max() <= P.t_upper
    np.testing.assert_allclose(on.log["qdot"], off.log["qdot"], atol=1e-9)
    np.testing.assert_allclose(on.log["t_bat"], off.log["t_bat"], atol=1e-12)


def test_single_layer_controller_label_and_bounds():
    ctl = SingleLayerController(MpcConfig(horizon=10))
    assert ctl.label == "single_N10"
    cycle = bundled_cycle("nycc")
    res = run_closed_loop(cycle, ctl, BatteryState(39.0, 0.9), P)
    assert np.all(res.log["qdot"] >= P.qdot_min) and np.all(res.log["qdot"] <= P.qdot_max)
