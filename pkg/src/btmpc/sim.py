"""Closed-loop simulation, metrics, comparison reports and result CSVs."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .battery import BatteryParams, BatteryState, PowerLimitError, cooling_power, step
from .controllers import DrivingContext
from .cycles import DriveCycle
from .traction import VehicleParams, demand_profile

COLUMNS = (
    "time", "speed", "p_trac", "qdot", "p_temp", "t_bat", "soc",
    "t_ref", "soc_ref", "epsilon",
    "solve_time_single", "solve_time_schedule", "solve_time_pilot",
    "status", "schedule_residual", "schedule_excess",
)
_NUMERIC = tuple(c for c in COLUMNS if c != "status")
_META = ("cycle", "controller", "dt", "t0", "soc0", "final_t_bat", "final_soc")


class SimulationError(RuntimeError):
    pass


class ScenarioMismatch(ValueError):
    pass


@dataclass
class SimResult:
    cycle: str
    controller: str
    dt: float
    initial: BatteryState
    final: BatteryState
    log: Dict[str, np.ndarray]
    wall_time: float = 0.0

    def __len__(self) -> int:
        return len(self.log["time"])

    def __getitem__(self, column: str) -> np.ndarray:
        return self.log[column]


@dataclass
class Metrics:
    terminal_soc: float
    soc_drop: float
    cooling_energy: float  # J, electrical
    violation_seconds: float
    violation_degree_seconds: float
    peak_t: float
    avg_solve_single: float = 0.0
    max_solve_single: float = 0.0
    avg_solve_schedule: float = 0.0
    max_solve_schedule: float = 0.0
    avg_solve_pilot: float = 0.0
    max_solve_pilot: float = 0.0
    max_schedule_excess: float = 0.0
    max_schedule_residual: float = 0.0


def run_closed_loop(
    cycle: DriveCycle,
    controller,
    initial: BatteryState,
    params: BatteryParams = BatteryParams(),
    vehicle: VehicleParams = VehicleParams(),
    flow_window: float = 250.0,
    progress=None,
) -> SimResult:
    """Drive the exact plant with ``controller`` over every cycle sample.

    Row ``k`` holds the state measured at sample ``k`` and the input applied
    over ``[k dt, (k+1) dt)``; the state after the last input is ``final``.
    """
    context = DrivingContext.build(cycle, vehicle, params, flow_window)
    controller.reset(context)
    p_trac = demand_profile(cycle, vehicle)
    n = len(cycle)
    log = {c: np.full(n, np.nan) for c in _NUMERIC}
    status: List[str] = []
    log["time"][:] = cycle.times
    log["speed"][:] = cycle.speeds
    log["p_trac"][:] = p_trac
    state = initial
    start = time.perf_counter()
    for k in range(n):
        action = controller.act(k, state)
        qdot = float(np.clip(action.qdot, params.qdot_min, 0.0))
        log["qdot"][k] = qdot
        log["p_temp"][k] = cooling_power(qdot, params)
        log["t_bat"][k] = state.t_bat
        log["soc"][k] = state.soc
        for name in ("t_ref", "soc_ref", "epsilon", "solve_time_single", "solve_time_schedule",
                     "solve_time_pilot", "schedule_residual", "schedule_excess"):
            log[name][k] = getattr(action, name)
        status.append(action.status)
        try:
            state, _ = step(state, float(p_trac[k]), qdot, cycle.dt, params)
        except PowerLimitError as exc:
            raise SimulationError(
                f"{cycle.name}/{controller.label}: plant power limit at step {k} "
                f"(t={k * cycle.dt:g} s, p_trac={p_trac[k]:.0f} W, qdot={qdot:.0f} W): {exc}"
            ) from exc
        if progress is not None:
            progress(k, n)
    log["status"] = np.array(status, dtype=object)
    return SimResult(cycle.name, controller.label, cycle.dt, initial, state, log, time.perf_counter() - start)


def replay(result: SimResult, params: BatteryParams = BatteryParams()) -> np.ndarray:
    """Open-loop re-simulation of the logged inputs; returns (n+1, 2) states."""
    out = np.empty((len(result) + 1, 2))
    state = result.initial
    out[0] = state.t_bat, state.soc
    for k in range(len(result)):
        state, _ = step(state, float(result.log["p_trac"][k]), float(result.log["qdot"][k]), result.dt, params)
        out[k + 1] = state.t_bat, state.soc
    return out


def excess_time_and_area(values: np.ndarray, limit: float, dt: float):
    """Time above ``limit`` and area above it for a linearly interpolated trace."""
    e = np.asarray(values, dtype=float) - limit
    a, b = e[:-1], e[1:]
    seconds = np.zeros(a.size)
    area = np.zeros(a.size)
    both = (a >= 0) & (b >= 0)
    seconds[both] = dt * ((a[both] > 0) | (b[both] > 0))
    area[both] = 0.5 * dt * (a[both] + b[both])
    cross = ((a > 0) & (b < 0)) | ((a < 0) & (b > 0))
    pos = np.where(a > 0, a, b)[cross]
    neg = np.where(a > 0, b, a)[cross]
    frac = pos / (pos - neg)
    seconds[cross] = dt * frac
    area[cross] = 0.5 * dt * frac * pos
    return float(seconds.sum()), float(area.sum())


def _stats(series: np.ndarray):
    s = series[np.isfinite(series)]
    return (float(s.mean()), float(s.max())) if s.size else (0.0, 0.0)


def compute_metrics(result: SimResult, params: BatteryParams = BatteryParams()) -> Metrics:
    log = result.log
    t = log["t_bat"]
    secs, area = excess_time_and_area(t, params.t_upper, result.dt)
    energy = float(trapezoid(log["p_temp"], dx=result.dt))
    single = _stats(log["solve_time_single"])
    sched = _stats(log["solve_time_schedule"])
    pilot = _stats(log["solve_time_pilot"])
    excess = log["schedule_excess"]
    resid = log["schedule_residual"]
    return Metrics(
        terminal_soc=result.final.soc,
        soc_drop=max(0.0, result.initial.soc - result.final.soc),
        cooling_energy=abs(energy),
        violation_seconds=secs,
        violation_degree_seconds=area,
        peak_t=float(max(np.max(t), result.final.t_bat)),
        avg_solve_single=single[0],
        max_solve_single=single[1],
        avg_solve_schedule=sched[0],
        max_solve_schedule=sched[1],
        avg_solve_pilot=pilot[0],
        max_solve_pilot=pilot[1],
        max_schedule_excess=float(np.nanmax(excess)) if np.isfinite(excess).any() else 0.0,
        max_schedule_residual=float(np.nanmax(resid)) if np.isfinite(resid).any() else 0.0,
    )


def savings(drop: float, drop_base: float) -> float:
    """Relative SOC-drop reduction versus a baseline drop."""
    if drop_base <= 0:
        raise ValueError("baseline SOC drop must be positive")
    return (drop_base - drop) / drop_base


@dataclass
class ComparisonRow:
    label: str
    metrics: Metrics
    soc_drop_reduction: float
    cooling_energy_reduction: float


@dataclass
class Comparison:
    baseline: str
    cycle: str
    t0: float
    rows: List[ComparisonRow] = field(default_factory=list)

    def row(self, label: str) -> ComparisonRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    _HEAD = ("controller", "terminal_soc", "soc_drop", "soc_saving_%", "cool_kJ", "cool_saving_%",
             "viol_s", "viol_Ks", "peak_T", "single_avg_s", "sched_avg_s", "pilot_avg_s")

    def _cells(self, r: ComparisonRow):
        m = r.metrics
        return (r.label, f"{m.terminal_soc:.6f}", f"{m.soc_drop:.6f}", f"{100 * r.soc_drop_reduction:.2f}",
                f"{m.cooling_energy / 1e3:.1f}", f"{100 * r.cooling_energy_reduction:.1f}",
                f"{m.violation_seconds:.1f}", f"{m.violation_degree_seconds:.2f}", f"{m.peak_t:.2f}",
                f"{m.avg_solve_single:.4f}", f"{m.avg_solve_schedule:.4f}", f"{m.avg_solve_pilot:.4f}")

    def to_text(self) -> str:
        table = [self._HEAD] + [self._cells(r) for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(self._HEAD))]
        lines = [f"cycle={self.cycle}  T0={self.t0:g} C  baseline={self.baseline}"]
        for row in table:
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("cycle", "t0") + self._HEAD)
        for r in self.rows:
            w.writerow((self.cycle, self.t0) + self._cells(r))
        return buf.getvalue()


def compare(results: Sequence[SimResult], baseline: str, params: BatteryParams = BatteryParams()) -> Comparison:
    """Savings of every result relative to the one labelled ``baseline``."""
    if not results:
        raise ValueError("nothing to compare")
    ref = results[0]
    for r in results[1:]:
        if (r.cycle, len(r), r.dt, r.initial) != (ref.cycle, len(ref), ref.dt, ref.initial):
            raise ScenarioMismatch(f"{r.controller} ran a different scenario than {ref.controller}")
    by_label = {r.controller: r for r in results}
    if baseline not in by_label:
        raise KeyError(f"baseline {baseline!r} not among {sorted(by_label)}")
    base = compute_metrics(by_label[baseline], params)
    out = Comparison(baseline, ref.cycle, ref.initial.t_bat)
    for r in results:
        m = compute_metrics(r, params)
        energy_red = ((base.cooling_energy - m.cooling_energy) / base.cooling_energy
                      if base.cooling_energy > 0 else 0.0)
        out.rows.append(ComparisonRow(r.controller, m, savings(m.soc_drop, base.soc_drop), energy_red))
    return out


# ---------------------------------------------------------------------------
# persistence


def write_result_csv(result: SimResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(cycle=result.cycle, controller=result.controller, dt=result.dt,
                t0=result.initial.t_bat, soc0=result.initial.soc,
                final_t_bat=result.final.t_bat, final_soc=result.final.soc)
    with path.open("w", newline="") as fh:
        for key in _META:
            val = meta[key]
            fh.write(f"# {key}={val:.17g}\n" if isinstance(val, float) else f"# {key}={val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for k in range(len(result)):
            w.writerow([result.log["status"][k] if c == "status" else f"{result.log[c][k]:.9g}" for c in COLUMNS])
    return path


def read_result_csv(path) -> SimResult:
    path = Path(path)
    meta = {}
    rows = []
    with path.open() as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            meta[key] = val
        else:
            body.append(ln)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    rows = list(reader)
    log = {c: np.array([float(r[i]) for r in rows]) for i, c in enumerate(COLUMNS) if c != "status"}
    log["status"] = np.array([r[COLUMNS.index("status")] for r in rows], dtype=object)
    return SimResult(
        cycle=meta["cycle"],
        controller=meta["controller"],
        dt=float(meta["dt"]),
        initial=BatteryState(float(meta["t0"]), float(meta["soc0"])),
        final=BatteryState(float(meta["final_t_bat"]), float(meta["final_soc"])),
        log=log,
    )


def metrics_csv(entries: Iterable[tuple]) -> str:
    """CSV text for ``(scenario, Metrics)`` pairs."""
    names = [f.name for f in fields(Metrics)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario"] + names)
    for scenario, m in entries:
        d = asdict(m)
        w.writerow([scenario] + [f"{d[n]:.9g}" for n in names])
    return buf.getvalue()


PLOT_SCRIPT = '''"""Plot temperature, SOC and cooling input from result CSVs.

usage: python plot_results.py result1.csv [result2.csv ...]
"""
import sys

import matplotlib.pyplot as plt
import numpy as np

fig, axes = plt.subplots(3, 1, sharex=True, figsize=(9, 8))
for path in sys.argv[1:]:
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#", dtype=None, encoding=None)
    axes[0].plot(data["time"], data["t_bat"], label=path)
    if np.isfinite(data["t_ref"]).any():
        axes[0].step(data["time"], data["t_ref"], where="post", ls="--", label=path + " T*")
    axes[1].plot(data["time"], data["soc"], label=path)
    axes[2].plot(data["time"], data["qdot"], label=path)
axes[0].axhline(40.0, color="k", lw=0.8)
axes[0].set_ylabel("T_bat [C]")
axes[1].set_ylabel("SOC [-]")
axes[2].set_ylabel("Qdot [W]")
axes[2].set_xlabel("time [s]")
axes[0].legend(fontsize=7)
plt.tight_layout()
plt.show()
'''
