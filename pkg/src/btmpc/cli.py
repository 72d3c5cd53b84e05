"""Command line entry point: ``btmpc {run,sweep,compare,verify,defaults}``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import params as params_mod
from .battery import BatteryState
from .controllers import RuleBasedController, SingleLayerController, TwoLayerController
from .cycles import CycleError, PreviewMode, get_cycle
from .sim import (
    PLOT_SCRIPT,
    SimResult,
    SimulationError,
    compare,
    compute_metrics,
    metrics_csv,
    run_closed_loop,
    write_result_csv,
)

CONTROLLERS = ("rule", "single", "single_flow", "two_layer", "two_layer_noioch")
log = logging.getLogger("btmpc")


def make_controller(name: str, settings: params_mod.Settings, horizon: Optional[int] = None):
    mpc = settings.mpc if horizon is None else replace(settings.mpc, horizon=horizon)
    if name == "rule":
        return RuleBasedController(settings.rule)
    if name == "single":
        return SingleLayerController(replace(mpc, preview_mode=PreviewMode.EXACT_FULL_CYCLE), settings.solver)
    if name == "single_flow":
        return SingleLayerController(replace(mpc, preview_mode=PreviewMode.EXACT_SHORT_THEN_FLOW), settings.solver)
    if name == "two_layer":
        return TwoLayerController(replace(mpc, ioch_enabled=True), settings.solver)
    if name == "two_layer_noioch":
        return TwoLayerController(replace(mpc, ioch_enabled=False), settings.solver)
    raise ValueError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLERS)}")


def simulate(job) -> SimResult:
    """Worker entry: ``(cycle, controller, t0, horizon, settings)``."""
    cycle_name, controller, t0, horizon, settings = job
    cycle = get_cycle(cycle_name)
    ctl = make_controller(controller, settings, horizon)
    return run_closed_loop(cycle, ctl, BatteryState(t0, settings.sim.soc0), settings.battery, settings.vehicle,
                           settings.mpc.flow_window)


def _run_jobs(jobs, workers: int) -> List[SimResult]:
    if workers <= 1 or len(jobs) <= 1:
        return [simulate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(simulate, jobs))


def _scenario(r: SimResult) -> str:
    return f"{r.cycle}_{r.controller}_T{r.initial.t_bat:g}"


def _write_outputs(out_dir: Path, results: Sequence[SimResult], report: str, settings, plot: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_result_csv(r, out_dir / f"{_scenario(r)}.csv")
    entries = [(_scenario(r), compute_metrics(r, settings.battery)) for r in results]
    (out_dir / "metrics.csv").write_text(metrics_csv(entries))
    (out_dir / "report.txt").write_text(report)
    if plot:
        (out_dir / "plot_results.py").write_text(PLOT_SCRIPT)


def _single_report(r: SimResult, settings) -> str:
    m = compute_metrics(r, settings.battery)
    lines = [f"scenario {_scenario(r)}"]
    for key, value in vars(m).items():
        lines.append(f"  {key:26s} {value:.6g}")
    return "\n".join(lines) + "\n"


def _csv_list(text: str, cast=str):
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="btmpc", description="Battery thermal management MPC simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, t0_list=False):
        p.add_argument("--cycle", default="udds", help="udds, nycc, or a time,speed CSV path (m/s)")
        p.add_argument("--params", type=Path, help="key = value parameter file")
        p.add_argument("--out-dir", type=Path, default=Path("results"))
        p.add_argument("--plot-script", action="store_true", help="also write plot_results.py")
        if t0_list:
            p.add_argument("--t0", type=lambda s: _csv_list(s, float), default=[35.0],
                           help="initial temperature(s) in C, comma separated")
        else:
            p.add_argument("--t0", type=float, default=35.0, help="initial temperature in C")
        p.add_argument("--jobs", type=int, default=1, help="parallel simulations")

    p = sub.add_parser("run", help="one controller on one cycle")
    common(p)
    p.add_argument("--controller", choices=CONTROLLERS, default="rule")
    p.add_argument("--horizon", type=int, help="single-layer horizon in steps")

    p = sub.add_parser("sweep", help="horizon / initial-temperature sweep against the rule baseline")
    common(p, t0_list=True)
    p.add_argument("--controller", choices=("single", "single_flow"), default="single")
    p.add_argument("--horizons", type=lambda s: _csv_list(s, int), default=[10, 60, 120, 180])

    p = sub.add_parser("compare", help="several controllers on the same scenario")
    common(p)
    p.add_argument("--controllers", type=_csv_list, default=["rule", "two_layer"])
    p.add_argument("--baseline", default="rule")

    p = sub.add_parser("verify", help="run the invariant and oracle suite")
    p.add_argument("--params", type=Path)

    p = sub.add_parser("defaults", help="print every parameter with its default")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = params_mod.load(args.params) if getattr(args, "params", None) else params_mod.Settings()
        if args.command == "defaults":
            sys.stdout.write(params_mod.dump_defaults(settings))
            return 0
        if args.command == "verify":
            return _verify(settings)
        return _simulate_command(args, settings)
    except (params_mod.ParamError, CycleError, SimulationError, ValueError, OSError) as exc:
        print(f"btmpc: error: {exc}", file=sys.stderr)
        return 2


def _simulate_command(args, settings) -> int:
    get_cycle(args.cycle)  # fail fast on a bad cycle
    if args.command == "run":
        res = _run_jobs([(args.cycle, args.controller, args.t0, args.horizon, settings)], 1)
        report = _single_report(res[0], settings)
    elif args.command == "compare":
        unknown = [c for c in args.controllers if c not in CONTROLLERS]
        if unknown:
            raise ValueError(f"unknown controller(s) {', '.join(unknown)}; choose from {', '.join(CONTROLLERS)}")
        if args.baseline not in args.controllers:
            raise ValueError(f"baseline {args.baseline!r} must be one of --controllers")
        jobs = [(args.cycle, c, args.t0, None, settings) for c in args.controllers]
        res = _run_jobs(jobs, args.jobs)
        labels = {c: make_controller(c, settings).label for c in args.controllers}
        report = compare(res, labels[args.baseline], settings.battery).to_text()
    else:  # sweep
        jobs = []
        for t0 in args.t0:
            jobs.append((args.cycle, "rule", t0, None, settings))
            jobs += [(args.cycle, args.controller, t0, n, settings) for n in args.horizons]
        res = _run_jobs(jobs, args.jobs)
        parts = []
        for t0 in args.t0:
            group = [r for r in res if r.initial.t_bat == t0]
            parts.append(compare(group, "rule", settings.battery).to_text())
        report = "\n".join(parts)
    _write_outputs(args.out_dir, res, report, settings, args.plot_script)
    sys.stdout.write(report)
    return 0


def _verify(settings) -> int:
    from .verify import run_suite

    results = run_suite(settings.battery)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
