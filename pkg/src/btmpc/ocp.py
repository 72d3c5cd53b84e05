"""Finite-horizon optimal control over the cooling-rate sequence.

Problems are solved by single shooting: the decision vector holds the
cooling inputs (scaled to [-1, 0]) and, for the slack-augmented economic
cost, one temperature-bound slack per step. Input bounds are enforced by
projection inside L-BFGS-B; state bounds enter as a quadratic penalty whose
weight is escalated when the bound excess stays above tolerance.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .battery import (
    EXACT_PAIR,
    REDUCED_PAIR,
    BatteryParams,
    BatteryState,
    CurrentModel,
    ModelPair,
    PowerLimitError,
    step as battery_step,
)

_MODEL_CODE = {
    CurrentModel.EXACT: _kernels.EXACT,
    CurrentModel.SOC_APPROX: _kernels.SOC_APPROX,
    CurrentModel.THERMAL_APPROX: _kernels.THERMAL_APPROX,
}


class InfeasibleError(RuntimeError):
    """Every candidate input sequence drives the model past its power limit."""


class CostForm(enum.Enum):
    ECONOMIC = "economic"
    TRACKING = "tracking"
    ECONOMIC_WITH_SLACK = "economic_with_slack"


class SolveStatus(enum.Enum):
    CONVERGED = "converged"
    ITER_LIMIT = "iter_limit"
    INFEASIBLE_RELAXED = "infeasible_relaxed"


@dataclass(frozen=True)
class StateBounds:
    """Temperature and SOC bounds; temperature bounds may vary per step."""

    t_lower: object = 20.0
    t_upper: object = 40.0
    soc_lower: float = 0.30
    soc_upper: float = 0.90

    @classmethod
    def from_params(cls, params: BatteryParams, backoff: float = 0.0) -> "StateBounds":
        return cls(params.t_lower, params.t_upper - backoff, params.soc_lower, params.soc_upper)


@dataclass(frozen=True)
class SlackSpec:
    """Online tightening of the temperature upper bound.

    Each step ``i`` gets a slack ``eps_i`` in ``[0, upper]`` that lowers the
    bound to ``t_upper - eps_i``; the cost adds ``weight * (delta_now - eps_i)^2``.
    """

    weight: float = 10.0
    delta_now: float = 0.0
    upper: float = 5.0


@dataclass
class OcpProblem:
    horizon_steps: int
    step: float
    initial_state: BatteryState
    p_trac_preview: np.ndarray
    params: BatteryParams
    model_pair: ModelPair = EXACT_PAIR
    cost_form: CostForm = CostForm.ECONOMIC
    state_bounds: Optional[StateBounds] = None
    t_ref: Optional[np.ndarray] = None
    soc_ref: Optional[np.ndarray] = None
    tracking_weight: float = 1e4
    slack: Optional[SlackSpec] = None
    input_bounds: Optional[tuple] = None

    def __post_init__(self):
        n = self.horizon_steps
        if n < 0:
            raise ValueError("horizon_steps must be nonnegative")
        self.p_trac_preview = np.asarray(self.p_trac_preview, dtype=float)
        if self.p_trac_preview.size < n:
            raise ValueError(f"preview has {self.p_trac_preview.size} samples, need {n}")
        if self.input_bounds is None:
            self.input_bounds = (self.params.qdot_min, self.params.qdot_max)
        lo, hi = self.input_bounds
        if not lo <= hi:
            raise ValueError("input bounds out of order")
        if self.cost_form is CostForm.TRACKING:
            if self.t_ref is None or self.soc_ref is None:
                raise ValueError("tracking cost needs t_ref and soc_ref")
            self.t_ref = np.asarray(self.t_ref, dtype=float)
            self.soc_ref = np.asarray(self.soc_ref, dtype=float)
            if self.t_ref.size < n + 1 or self.soc_ref.size < n + 1:
                raise ValueError("references must cover horizon_steps + 1 samples")
        if self.cost_form is CostForm.ECONOMIC_WITH_SLACK and self.slack is None:
            raise ValueError("economic_with_slack cost needs a SlackSpec")
        if self.state_bounds is not None:
            tl = self._bound_array(self.state_bounds.t_lower)
            tu = self._bound_array(self.state_bounds.t_upper)
            if np.any(tl > tu) or self.state_bounds.soc_lower > self.state_bounds.soc_upper:
                raise ValueError("state bounds out of order")

    def _bound_array(self, value) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(self.horizon_steps + 1, float(arr))
        if arr.size < self.horizon_steps + 1:
            raise ValueError("per-step bounds must cover horizon_steps + 1 samples")
        return arr[: self.horizon_steps + 1]

    @property
    def has_slack(self) -> bool:
        return self.cost_form is CostForm.ECONOMIC_WITH_SLACK

    @property
    def t_upper_array(self) -> np.ndarray:
        return self._bound_array(self.state_bounds.t_upper)

    @property
    def t_lower_array(self) -> np.ndarray:
        return self._bound_array(self.state_bounds.t_lower)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 300
    kkt_tolerance: float = 1e-4
    finite_difference_step: float = 0.05  # W
    penalty_weight: float = 1e6  # per K^2 (or SOC^2) per step
    penalty_growth: float = 10.0
    max_escalations: int = 3
    violation_tolerance: float = 1e-3
    lbfgs_memory: int = 10
    max_line_search: int = 30
    ftol: float = 1e-13
    gtol: float = 1e-10


@dataclass
class OcpSolution:
    qdot_seq: np.ndarray
    slack_seq: Optional[np.ndarray]
    state_traj: List[BatteryState]
    cost: float  # penalized objective at ``penalty_weight``
    stage_cost: float
    status: SolveStatus
    kkt_residual: float
    solve_time: float
    penalty_weight: float
    violation: float  # largest state-bound excess over steps 1..N
    iterations: int = 0

    @property
    def temperatures(self) -> np.ndarray:
        return np.array([s.t_bat for s in self.state_traj])

    @property
    def socs(self) -> np.ndarray:
        return np.array([s.soc for s in self.state_traj])


@dataclass
class RolloutResult:
    state_traj: List[BatteryState]
    cost: float  # declared stage cost (slack term included)
    penalized_cost: float
    violations: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# reference rollout (pure Python, via the battery stepper)


def rollout(
    problem: OcpProblem,
    qdot_seq: Sequence[float],
    slack_seq: Optional[Sequence[float]] = None,
    penalty_weight: float = 0.0,
) -> RolloutResult:
    """Forward-simulate ``qdot_seq`` and evaluate the problem's cost.

    ``violations[j-1]`` is the largest bound excess at step ``j`` (K for
    temperature, fraction for SOC). A power-limit failure anywhere yields an
    infinite cost.
    """
    n = problem.horizon_steps
    q = np.asarray(qdot_seq, dtype=float)
    if q.size != n:
        raise ValueError(f"expected {n} inputs, got {q.size}")
    eps = np.zeros(n) if slack_seq is None else np.asarray(slack_seq, dtype=float)
    params = problem.params
    states = [problem.initial_state]
    try:
        for i in range(n):
            nxt, _ = battery_step(states[-1], problem.p_trac_preview[i], q[i], problem.step, params, problem.model_pair)
            states.append(nxt)
    except PowerLimitError:
        return RolloutResult(states, np.inf, np.inf, np.full(n, np.inf))

    cost = 0.0
    if problem.cost_form in (CostForm.ECONOMIC, CostForm.ECONOMIC_WITH_SLACK):
        cost += float(np.sum(params.cooling_coefficient * q))
    if problem.cost_form is CostForm.TRACKING:
        for j, s in enumerate(states):
            cost += (s.t_bat - problem.t_ref[j]) ** 2 + problem.tracking_weight * (s.soc - problem.soc_ref[j]) ** 2
    if problem.has_slack:
        cost += problem.slack.weight * float(np.sum((problem.slack.delta_now - eps) ** 2))

    violations = np.zeros(n)
    penalty = 0.0
    if problem.state_bounds is not None and n > 0:
        b = problem.state_bounds
        t_hi = problem.t_upper_array
        t_lo = problem.t_lower_array
        for j in range(1, n + 1):
            s = states[j]
            excess = [
                s.t_bat - (t_hi[j] - eps[j - 1]),
                t_lo[j] - s.t_bat,
                s.soc - b.soc_upper,
                b.soc_lower - s.soc,
            ]
            pos = [max(0.0, e) for e in excess]
            penalty += sum(e * e for e in pos)
            violations[j - 1] = max(pos)
    return RolloutResult(states, cost, cost + penalty_weight * penalty, violations)


# ---------------------------------------------------------------------------
# compiled objective


class _Objective:
    """Scaled objective ``z -> (f, grad)`` backed by the compiled kernel."""

    def __init__(self, problem: OcpProblem, penalty_weight: float):
        self.problem = problem
        self.n = problem.horizon_steps
        lo, hi = problem.input_bounds
        self.q_scale = max(abs(lo), abs(hi), 1.0)
        self.mu = penalty_weight
        p = problem.params
        ocv, res = p.ocv_map, p.resistance_map
        n = self.n
        self._fixed = (
            p.lumped_heat_capacity, p.nominal_capacity, p.cooling_coefficient,
            ocv.v0, ocv.slope, res.r0, res.soc_coef, res.temp_coef, res.t_ref, res.floor,
        )
        form = problem.cost_form
        self.economic = form in (CostForm.ECONOMIC, CostForm.ECONOMIC_WITH_SLACK)
        self.tracking = form is CostForm.TRACKING
        self.t_ref = problem.t_ref[: n + 1] if self.tracking else np.zeros(n + 1)
        self.s_ref = problem.soc_ref[: n + 1] if self.tracking else np.zeros(n + 1)
        self.bounded = problem.state_bounds is not None
        if self.bounded:
            sb = problem.state_bounds
            self.t_lo, self.t_hi = problem.t_lower_array, problem.t_upper_array
            self.s_lo, self.s_hi = float(sb.soc_lower), float(sb.soc_upper)
        else:
            self.t_lo = self.t_hi = np.zeros(n + 1)
            self.s_lo, self.s_hi = 0.0, 1.0
        self.slack = problem.has_slack
        if self.slack:
            self.gamma, self.delta = problem.slack.weight, problem.slack.delta_now
        else:
            self.gamma = self.delta = 0.0
        self.p = np.ascontiguousarray(problem.p_trac_preview[:n])
        self.t_ref = np.ascontiguousarray(self.t_ref, dtype=float)
        self.s_ref = np.ascontiguousarray(self.s_ref, dtype=float)
        self.t_lo = np.ascontiguousarray(self.t_lo, dtype=float)
        self.t_hi = np.ascontiguousarray(self.t_hi, dtype=float)
        self.evaluations = 0

    def packed(self):
        """Scalar and flag arrays in the layout expected by the kernels."""
        k = _kernels
        pr = self.problem
        cfg = np.zeros(k.N_CFG)
        cfg[k.C_T0] = pr.initial_state.t_bat
        cfg[k.C_S0] = pr.initial_state.soc
        cfg[k.C_DT] = pr.step
        cfg[k.C_CAP:k.C_RFLOOR + 1] = self._fixed
        cfg[k.C_W1] = pr.tracking_weight
        cfg[k.C_SLO], cfg[k.C_SHI] = self.s_lo, self.s_hi
        cfg[k.C_MU] = self.mu
        cfg[k.C_GAMMA], cfg[k.C_DELTA] = self.gamma, self.delta
        cfg[k.C_QSCALE] = self.q_scale
        flags = np.zeros(k.N_FLAGS, dtype=np.int64)
        flags[k.F_THERMAL] = _MODEL_CODE[pr.model_pair.thermal]
        flags[k.F_SOC] = _MODEL_CODE[pr.model_pair.soc]
        flags[k.F_ECON], flags[k.F_TRACK] = self.economic, self.tracking
        flags[k.F_BOUNDED], flags[k.F_SLACK] = self.bounded, self.slack
        return cfg, flags

    def minimize(self, z0, lo, hi, config: "SolverConfig"):
        cfg, flags = self.packed()
        return _kernels.minimize_box(
            np.ascontiguousarray(z0, dtype=float), lo, hi, self.n, cfg, flags, self.p,
            self.t_ref, self.s_ref, self.t_lo, self.t_hi,
            config.max_iterations, config.lbfgs_memory, config.max_line_search, config.ftol, config.gtol,
        )

    def split(self, z: np.ndarray):
        q = z[: self.n] * self.q_scale
        eps = z[self.n:] if self.slack else np.zeros(self.n)
        return q, eps

    def raw(self, q: np.ndarray, eps: np.ndarray, want_grad: bool = True, mu: Optional[float] = None):
        pr = self.problem
        s0 = pr.initial_state
        return _kernels.evaluate(
            s0.t_bat, s0.soc, np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(eps, dtype=float),
            self.p, pr.step,
            _MODEL_CODE[pr.model_pair.thermal], _MODEL_CODE[pr.model_pair.soc],
            *self._fixed,
            self.economic, self.tracking, self.t_ref, self.s_ref, pr.tracking_weight,
            self.bounded, self.t_lo, self.t_hi, self.s_lo, self.s_hi, self.mu if mu is None else mu,
            self.slack, self.gamma, self.delta,
            want_grad,
        )

    def __call__(self, z: np.ndarray):
        self.evaluations += 1
        q, eps = self.split(z)
        ok, stage, pen, gq, geps, *_ = self.raw(q, eps)
        if not ok:
            return np.inf, np.zeros_like(z)
        g = gq * self.q_scale
        if self.slack:
            g = np.concatenate([g, geps])
        return stage + pen, g

    def bounds(self):
        lo, hi = self.problem.input_bounds
        b = [(lo / self.q_scale, hi / self.q_scale)] * self.n
        if self.slack:
            b += [(0.0, self.problem.slack.upper)] * self.n
        return b


def _projected_gradient_norm(z: np.ndarray, g: np.ndarray, bounds) -> float:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return float(np.max(np.abs(z - np.clip(z - g, lo, hi)))) if z.size else 0.0


def objective_gradient(problem: OcpProblem, qdot_seq, slack_seq=None, penalty_weight: float = 1e6):
    """Penalized objective and its adjoint gradient in physical units (per W, per K)."""
    obj = _Objective(problem, penalty_weight)
    q = np.asarray(qdot_seq, dtype=float)
    eps = np.zeros(problem.horizon_steps) if slack_seq is None else np.asarray(slack_seq, dtype=float)
    ok, stage, pen, gq, geps, *_ = obj.raw(q, eps)
    if not ok:
        raise PowerLimitError("rollout exceeded the pack power limit")
    return stage + pen, gq, (geps if problem.has_slack else None)


def solve(
    problem: OcpProblem,
    warm_start: Optional[Sequence[float]] = None,
    config: SolverConfig = SolverConfig(),
    warm_slack: Optional[Sequence[float]] = None,
) -> OcpSolution:
    """Minimize the penalized objective; deterministic for identical inputs."""
    t_start = time.perf_counter()
    n = problem.horizon_steps
    lo, hi = problem.input_bounds
    if n == 0:
        return OcpSolution(np.zeros(0), np.zeros(0) if problem.has_slack else None, [problem.initial_state],
                           0.0, 0.0, SolveStatus.CONVERGED, 0.0, time.perf_counter() - t_start,
                           config.penalty_weight, 0.0)

    mu = config.penalty_weight
    obj = _Objective(problem, mu)
    q0 = np.zeros(n) if warm_start is None else np.clip(np.asarray(warm_start, dtype=float)[:n], lo, hi)
    z0 = q0 / obj.q_scale
    if problem.has_slack:
        e0 = np.zeros(n) if warm_slack is None else np.clip(np.asarray(warm_slack, dtype=float)[:n], 0.0, problem.slack.upper)
        z0 = np.concatenate([z0, e0])
    bounds = obj.bounds()
    lo_b = np.array([b[0] for b in bounds])
    hi_b = np.array([b[1] for b in bounds])

    candidates = [z0]
    if warm_start is not None:
        cold = np.zeros_like(z0)
        candidates.append(cold)
    z_best = None
    f_best = np.inf
    iterations = 0
    for attempt in range(config.max_escalations + 1):
        obj.mu = mu
        f_start = [obj(z)[0] for z in candidates]
        if not np.all(np.isfinite(f_start)):
            full = np.concatenate([np.full(n, lo / obj.q_scale), np.zeros(len(z0) - n)])
            candidates.append(full)
            f_start.append(obj(full)[0])
        order = int(np.argmin(f_start))
        if not np.isfinite(f_start[order]):
            raise InfeasibleError("no candidate input sequence respects the pack power limit")
        z_init = candidates[order]
        z, f, nit, _ = obj.minimize(z_init, lo_b, hi_b, config)
        iterations += int(nit)
        # never return worse than where we started
        z_best, f_best = (z, f) if f <= f_start[order] else (z_init, f_start[order])
        q, eps = obj.split(z_best)
        _, _, _, _, _, _, _, t_viol, s_viol = obj.raw(q, eps, want_grad=False)
        violation = max(t_viol, s_viol)
        if violation <= config.violation_tolerance or attempt == config.max_escalations:
            break
        mu *= config.penalty_growth
        candidates = [z_best, z0]

    q, eps = obj.split(z_best)
    q = np.clip(q, lo, hi)
    ok, stage, pen, gq, geps, T, S, t_viol, s_viol = obj.raw(q, eps)
    g = gq * obj.q_scale
    if problem.has_slack:
        g = np.concatenate([g, geps])
    kkt = _projected_gradient_norm(z_best, g, bounds) / max(1.0, abs(stage + pen))
    violation = max(t_viol, s_viol)
    if violation > config.violation_tolerance and problem.state_bounds is not None:
        status = SolveStatus.INFEASIBLE_RELAXED
    elif kkt <= config.kkt_tolerance:
        status = SolveStatus.CONVERGED
    else:
        status = SolveStatus.ITER_LIMIT
    states = [BatteryState(float(t), float(s)) for t, s in zip(T, S)]
    return OcpSolution(
        qdot_seq=q,
        slack_seq=eps.copy() if problem.has_slack else None,
        state_traj=states,
        cost=float(stage + pen),
        stage_cost=float(stage),
        status=status,
        kkt_residual=float(kkt),
        solve_time=time.perf_counter() - t_start,
        penalty_weight=mu,
        violation=float(violation),
        iterations=iterations,
    )


def verify_gradient(
    problem: OcpProblem,
    qdot_seq: Sequence[float],
    slack_seq: Optional[Sequence[float]] = None,
    penalty_weight: float = 1e6,
    config: SolverConfig = SolverConfig(),
) -> float:
    """Max relative error of the adjoint gradient vs central differences.

    The difference quotient is taken on the pure-Python :func:`rollout`, so
    the check is independent of the compiled path. The error is normalised
    by the largest finite-difference gradient component.
    """
    q = np.asarray(qdot_seq, dtype=float)
    eps = None if slack_seq is None else np.asarray(slack_seq, dtype=float)
    _, gq, geps = objective_gradient(problem, q, eps, penalty_weight)
    h = config.finite_difference_step

    def f(qq, ee):
        return rollout(problem, qq, ee, penalty_weight).penalized_cost

    fd_q = np.empty(q.size)
    for i in range(q.size):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        fd_q[i] = (f(qp, eps) - f(qm, eps)) / (2 * h)
    analytic = [gq]
    numeric = [fd_q]
    if problem.has_slack:
        e = np.zeros(q.size) if eps is None else eps
        he = h * 1e-3  # slack lives in kelvin, inputs in watts
        fd_e = np.empty(e.size)
        for i in range(e.size):
            ep, em = e.copy(), e.copy()
            ep[i] += he
            em[i] -= he
            fd_e[i] = (f(q, ep) - f(q, em)) / (2 * he)
        analytic.append(geps)
        numeric.append(fd_e)
    worst = 0.0
    for a, b in zip(analytic, numeric):
        scale = max(np.max(np.abs(b)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - b)) / scale))
    return worst


_WARM = False


def warmup() -> None:
    """Compile (or load from cache) the solver kernels ahead of timed solves."""
    global _WARM
    if _WARM:
        return
    state = BatteryState(39.0, 0.8)
    params = BatteryParams()
    p = np.full(3, 20e3)
    bounds = StateBounds.from_params(params)
    for pair in (EXACT_PAIR, REDUCED_PAIR):
        solve(OcpProblem(3, 1.0, state, p, params, pair, CostForm.ECONOMIC, bounds))
    solve(OcpProblem(3, 5.0, state, p, params, REDUCED_PAIR, CostForm.ECONOMIC_WITH_SLACK, bounds,
                     slack=SlackSpec(10.0, 0.5, 5.0)))
    solve(OcpProblem(3, 1.0, state, p, params, EXACT_PAIR, CostForm.TRACKING,
                     t_ref=np.full(4, 38.0), soc_ref=np.full(4, 0.8)))
    _WARM = True
