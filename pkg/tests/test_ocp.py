import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btmpc.battery import BatteryParams, BatteryState, large_pack_params, step
from btmpc.ocp import (
    CostForm,
    OcpProblem,
    SlackSpec,
    SolveStatus,
    StateBounds,
    objective_gradient,
    rollout,
    solve,
    verify_gradient,
)
from btmpc.verify import grid_search, random_desk_problem

PARAMS = BatteryParams()
BOUNDS = StateBounds.from_params(PARAMS)


def econ(t0, p, step_size=1.0, params=PARAMS, soc0=0.8):
    p = np.asarray(p, dtype=float)
    return OcpProblem(p.size, step_size, BatteryState(t0, soc0), p, params, state_bounds=StateBounds.from_params(params))


def test_rollout_examples():
    empty = rollout(econ(30.0, []), [])
    assert empty.cost == 0.0 and len(empty.state_traj) == 1
    prob = econ(30.0, np.full(10, 25e3))
    assert rollout(prob, np.zeros(10)).cost == 0.0
    half = large_pack_params()
    prob = econ(30.0, np.full(10, 5e3), params=half)
    assert rollout(prob, np.full(10, -3000.0)).cost == pytest.approx(15000.0)
    with pytest.raises(ValueError):
        rollout(prob, np.zeros(3))


def test_rollout_matches_stepper_and_flags_power_limit():
    prob = econ(38.0, [10e3, 30e3, -5e3])
    q = np.array([-1000.0, -2000.0, 0.0])
    res = rollout(prob, q)
    s = prob.initial_state
    for i in range(3):
        s, _ = step(s, prob.p_trac_preview[i], q[i], 1.0, PARAMS)
        assert res.state_traj[i + 1] == s
    huge = econ(30.0, [1e9])
    assert rollout(huge, [0.0]).cost == np.inf


def test_rollout_violations_measure_excess():
    prob = econ(41.0, [0.0])
    res = rollout(prob, [0.0], penalty_weight=1e6)
    assert res.violations[0] == pytest.approx(1.0)
    assert res.penalized_cost == pytest.approx(res.cost + 1e6 * res.violations[0] ** 2)
    assert rollout(prob, [0.0]).penalized_cost == res.cost


def test_zero_traction_inside_bounds_gives_no_cooling():
    prob = econ(30.0, np.zeros(3))
    sol = solve(prob)
    np.testing.assert_array_equal(sol.qdot_seq, 0.0)
    oracle = grid_search(prob, sol.penalty_weight)
    np.testing.assert_array_equal(oracle.qdot_seq, 0.0)
    assert sol.cost <= oracle.cost + 1e-6


def test_tracking_uncontrolled_reference_is_zero_input():
    p = np.array([20e3, 35e3, 5e3, 15e3])
    base = econ(37.0, p)
    free = rollout(base, np.zeros(4)).state_traj
    prob = OcpProblem(4, 1.0, BatteryState(37.0, 0.8), p, PARAMS, cost_form=CostForm.TRACKING,
                      t_ref=[s.t_bat for s in free], soc_ref=[s.soc for s in free])
    sol = solve(prob)
    np.testing.assert_allclose(sol.qdot_seq, 0.0, atol=1e-6)
    assert sol.cost == pytest.approx(0.0, abs=1e-12)


def test_overtemperature_start_saturates_first_step():
    prob = econ(40.5, np.full(5, 20e3))
    sol = solve(prob)
    assert sol.qdot_seq[0] <= -2900.0
    oracle = grid_search(prob, sol.penalty_weight)
    assert oracle.qdot_seq[0] == -3000.0
    assert sol.cost <= oracle.cost + 1e-6


def test_zero_horizon_solve():
    sol = solve(econ(30.0, []))
    assert sol.qdot_seq.size == 0 and sol.status is SolveStatus.CONVERGED


def test_economic_gradient_is_cooling_coefficient():
    prob = OcpProblem(4, 1.0, BatteryState(30.0, 0.8), np.full(4, 10e3), PARAMS)
    _, gq, _ = objective_gradient(prob, np.full(4, -1000.0), penalty_weight=0.0)
    np.testing.assert_array_equal(gq, PARAMS.cooling_coefficient)


@pytest.mark.parametrize("form", list(CostForm))
def test_gradient_finite_difference(form):
    rng = np.random.default_rng(11)
    for _ in range(5):
        prob = random_desk_problem(rng, form, PARAMS, horizon=10)
        q = rng.uniform(-2900, -100, 10)
        eps = rng.uniform(0.1, 4.9, 10) if prob.has_slack else None
        assert verify_gradient(prob, q, eps) <= 1e-4


def _random_problem(seed, form):
    return random_desk_problem(np.random.default_rng(seed), form, PARAMS)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(list(CostForm)))
def test_solver_dominates_grid(seed, form):
    prob = _random_problem(seed, form)
    sol = solve(prob)
    oracle = grid_search(prob, sol.penalty_weight)
    assert sol.cost <= oracle.cost + 1e-6


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(list(CostForm)))
def test_solution_invariants(seed, form):
    prob = _random_problem(seed, form)
    sol = solve(prob)
    lo, hi = prob.input_bounds
    assert np.all(sol.qdot_seq >= lo) and np.all(sol.qdot_seq <= hi)
    if sol.slack_seq is not None:
        assert np.all(sol.slack_seq >= 0) and np.all(sol.slack_seq <= prob.slack.upper)
    ref = rollout(prob, sol.qdot_seq, sol.slack_seq, sol.penalty_weight)
    np.testing.assert_allclose(sol.temperatures, [s.t_bat for s in ref.state_traj], rtol=0, atol=1e-10)
    np.testing.assert_allclose(sol.socs, [s.soc for s in ref.state_traj], rtol=0, atol=1e-10)
    again = solve(prob)
    np.testing.assert_array_equal(sol.qdot_seq, again.qdot_seq)
    shifted = OcpProblem(**{**prob.__dict__, "p_trac_preview": prob.p_trac_preview + 0.0})
    np.testing.assert_array_equal(sol.qdot_seq, solve(shifted).qdot_seq)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(list(CostForm)))
def test_warm_start_monotone(seed, form):
    prob = _random_problem(seed, form)
    warm = np.random.default_rng(seed + 1).uniform(-3000, 0, prob.horizon_steps)
    sol = solve(prob, warm_start=warm)
    start = rollout(prob, warm, None if not prob.has_slack else np.zeros(prob.horizon_steps),
                    sol.penalty_weight).penalized_cost
    assert sol.cost <= start + 1e-9


def test_slack_tracks_delta_with_large_weight():
    prob = OcpProblem(3, 5.0, BatteryState(38.0, 0.8), np.full(3, 10e3), PARAMS,
                      cost_form=CostForm.ECONOMIC_WITH_SLACK, state_bounds=BOUNDS,
                      slack=SlackSpec(weight=1e6, delta_now=1.0, upper=5.0))
    sol = solve(prob)
    np.testing.assert_allclose(sol.slack_seq, 1.0, atol=0.02)
    assert np.all(sol.temperatures[1:] <= 39.0 + 1e-3)
    oracle = grid_search(prob, sol.penalty_weight)
    assert sol.cost <= oracle.cost + 1e-6


def test_problem_validation():
    with pytest.raises(ValueError):
        OcpProblem(3, 1.0, BatteryState(30, 0.8), np.zeros(2), PARAMS)
    with pytest.raises(ValueError):
        OcpProblem(3, 1.0, BatteryState(30, 0.8), np.zeros(3), PARAMS, cost_form=CostForm.TRACKING)
    with pytest.raises(ValueError):
        OcpProblem(3, 1.0, BatteryState(30, 0.8), np.zeros(3), PARAMS, cost_form=CostForm.ECONOMIC_WITH_SLACK)
    with pytest.raises(ValueError):
        OcpProblem(3, 1.0, BatteryState(30, 0.8), np.zeros(3), PARAMS, state_bounds=StateBounds(41.0, 40.0))
