"""Drive cycles, synthetic traffic-flow speed, and horizon speed previews."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

MPH = 0.44704
KPH = 1.0 / 3.6
_UNITS = {"mps": 1.0, "mph": MPH, "kph": KPH}
BUNDLED = ("udds", "nycc")


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class DriveCycle:
    dt: float
    speeds: np.ndarray
    name: str = "cycle"

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float)
        speeds.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)
        if not self.dt > 0:
            raise CycleError("dt must be positive")
        if speeds.ndim != 1 or speeds.size < 2:
            raise CycleError("a cycle needs at least two samples")
        if np.any(speeds < 0) or not np.all(np.isfinite(speeds)):
            raise CycleError("speeds must be finite and nonnegative")

    def __len__(self) -> int:
        return self.speeds.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.speeds.size) * self.dt

    @property
    def duration(self) -> float:
        return (self.speeds.size - 1) * self.dt


@dataclass(frozen=True)
class FlowProfile:
    window: float
    flow_speeds: np.ndarray

    def __post_init__(self):
        if not self.window > 0:
            raise CycleError("window must be positive")


class PreviewMode(enum.Enum):
    EXACT_FULL_CYCLE = "exact"
    EXACT_SHORT_THEN_FLOW = "flow"


@dataclass(frozen=True)
class SpeedPreview:
    start_index: int
    horizon_steps: int
    step: float
    speeds: np.ndarray
    mode: PreviewMode


def load_cycle(path: Union[str, Path], units: str = "mps", name: str | None = None) -> DriveCycle:
    """Read a two-column ``time_s, speed`` text file.

    Lines starting with ``#`` and a non-numeric header line are skipped.
    Sampling must be uniform.
    """
    if units not in _UNITS:
        raise CycleError(f"unknown units {units!r}; expected one of {sorted(_UNITS)}")
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = [p for p in text.replace(",", " ").split()]
        try:
            t, v = float(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            if not rows:
                continue  # header
            raise CycleError(f"{path}:{lineno}: cannot parse {line!r}") from None
        rows.append((t, v))
    if len(rows) < 2:
        raise CycleError(f"{path}: need at least two samples")
    data = np.array(rows)
    dts = np.diff(data[:, 0])
    if np.any(dts <= 0):
        bad = int(np.argmax(dts <= 0)) + 1
        raise CycleError(f"{path}: time not strictly increasing at sample {bad}")
    if not np.allclose(dts, dts[0], rtol=1e-6, atol=1e-9):
        raise CycleError(f"{path}: non-uniform sampling; resample first")
    speeds = data[:, 1] * _UNITS[units]
    if np.any(speeds < 0):
        raise CycleError(f"{path}: negative speed at sample {int(np.argmax(speeds < 0))}")
    return DriveCycle(float(dts[0]), speeds, name or path.stem)


def bundled_cycle(name: str) -> DriveCycle:
    """Load a cycle shipped with the package (``udds`` or ``nycc``)."""
    key = name.lower()
    if key not in BUNDLED:
        raise CycleError(f"unknown bundled cycle {name!r}; available: {', '.join(BUNDLED)}")
    ref = resources.files("btmpc") / "data" / f"{key}.csv"
    with resources.as_file(ref) as p:
        return load_cycle(p, "mps", key)


def get_cycle(name_or_path: str) -> DriveCycle:
    if name_or_path.lower() in BUNDLED:
        return bundled_cycle(name_or_path)
    return load_cycle(name_or_path)


def resample(cycle: DriveCycle, dt_out: float) -> DriveCycle:
    """Linear interpolation onto a uniform grid with spacing ``dt_out``."""
    if not dt_out > 0:
        raise CycleError("dt_out must be positive")
    if dt_out == cycle.dt:
        return cycle
    n = int(np.floor(cycle.duration / dt_out + 1e-9)) + 1
    t_out = np.arange(n) * dt_out
    return DriveCycle(dt_out, np.interp(t_out, cycle.times, cycle.speeds), cycle.name)


def build_flow_profile(cycle: DriveCycle, window: float = 250.0) -> FlowProfile:
    """Centered moving average over ``window`` seconds, truncated at the ends."""
    if window < cycle.dt:
        raise CycleError("window shorter than the sample period")
    half = int(round(window / cycle.dt / 2.0))
    v = cycle.speeds
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(v.size)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(v.size, idx + half + 1)
    return FlowProfile(window, (csum[hi] - csum[lo]) / (hi - lo))


def _sample(series: np.ndarray, pos: np.ndarray, pad: float) -> np.ndarray:
    """Linear interpolation at fractional indices, ``pad`` past the end."""
    n = series.size
    out = np.interp(pos, np.arange(n), series)
    out[pos > n - 1] = pad
    return out


def preview(
    cycle: DriveCycle,
    flow: FlowProfile,
    k: int,
    steps: int,
    step: float,
    exact_span: float = 15.0,
    blend_span: float = 15.0,
    mode: PreviewMode = PreviewMode.EXACT_FULL_CYCLE,
) -> SpeedPreview:
    """Speeds at ``t = j * step`` ahead of sample ``k`` for ``j = 0..steps``.

    In ``EXACT_SHORT_THEN_FLOW`` mode the true speed is used up to
    ``exact_span``, blended linearly toward the flow speed over
    ``blend_span``, and the flow speed afterwards. Past the end of the cycle
    both modes report the terminal flow speed.
    """
    if not 0 <= k < len(cycle):
        raise CycleError(f"preview start {k} outside cycle")
    t = np.arange(steps + 1) * step
    pos = k + t / cycle.dt
    pad = float(flow.flow_speeds[-1])
    exact = _sample(cycle.speeds, pos, pad)
    if mode is PreviewMode.EXACT_FULL_CYCLE:
        speeds = exact
    else:
        flow_v = _sample(flow.flow_speeds, pos, pad)
        if blend_span > 0:
            w = np.clip(1.0 - (t - exact_span) / blend_span, 0.0, 1.0)
        else:
            w = (t <= exact_span).astype(float)
        speeds = w * exact + (1.0 - w) * flow_v
    return SpeedPreview(k, steps, step, speeds, mode)
