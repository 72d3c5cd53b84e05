"""Flat ``key = value`` parameter files.

Keys are dotted by group, e.g.::

    # pack
    battery.lumped_heat_capacity = 3.5e4
    battery.resistance.r0 = 0.375
    vehicle.mass = 1500
    mpc.ioch_weight = 1e6
    rule.setpoint = 35

Anything not listed keeps its default. ``dump_defaults`` writes every key.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterator, Tuple, Union

from .battery import BatteryParams
from .controllers import MpcConfig, RuleBasedConfig
from .ocp import SolverConfig
from .traction import VehicleParams

_ALIASES = {"ocv_map": "ocv", "resistance_map": "resistance"}


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class SimSettings:
    soc0: float = 0.90

    def __post_init__(self):
        if not 0.0 <= self.soc0 <= 1.0:
            raise ValueError("soc0 must lie in [0, 1]")


@dataclass(frozen=True)
class Settings:
    battery: BatteryParams = field(default_factory=BatteryParams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    rule: RuleBasedConfig = field(default_factory=RuleBasedConfig)
    sim: SimSettings = field(default_factory=SimSettings)


def _walk(obj, prefix: str) -> Iterator[Tuple[str, Any]]:
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}.{_ALIASES.get(f.name, f.name)}"
        if is_dataclass(value):
            yield from _walk(value, key)
        else:
            yield key, value


def flatten(settings: Settings) -> Dict[str, Any]:
    out = {}
    for f in fields(settings):
        out.update(_walk(getattr(settings, f.name), f.name))
    return out


def _convert(text: str, like: Any, key: str):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, enum.Enum):
            kind = type(like)
            if text.upper() in kind.__members__:
                return kind[text.upper()]
            return kind(text)
        if isinstance(like, int):
            as_float = float(text)
            if not as_float.is_integer():
                raise ValueError(text)
            return int(as_float)
        return float(text)
    except ValueError:
        raise ParamError(f"{key}: cannot interpret {text!r} as {type(like).__name__}") from None


def parse(text: str, base: Settings = None, source: str = "<params>") -> Settings:
    """Apply ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    settings = base or Settings()
    known = flatten(settings)
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ParamError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        if key not in known:
            raise ParamError(f"{source}:{lineno}: unknown parameter {key!r}")
        raw[key] = _convert(value, known[key], f"{source}:{lineno}: {key}")
    # apply per group so cross-field validation sees the final values
    for group in sorted({k.split(".", 1)[0] for k in raw}):
        obj = getattr(settings, group)
        for key, value in raw.items():
            if key.split(".", 1)[0] != group:
                continue
            try:
                obj = _set_unvalidated(obj, key.split(".")[1:], value)
            except KeyError:
                raise ParamError(f"{source}: unknown parameter {key!r}") from None
        try:
            obj = _revalidate(obj)
        except ValueError as exc:
            raise ParamError(f"{source}: invalid {group} parameters: {exc}") from None
        settings = replace(settings, **{group: obj})
    return settings


def _set_unvalidated(obj, path, value):
    """Like dataclasses.replace but defers ``__post_init__`` checks."""
    name = path[0]
    real = {v: k for k, v in _ALIASES.items()}.get(name, name)
    if real not in {f.name for f in fields(obj)}:
        raise KeyError(name)
    new = object.__new__(type(obj))
    for f in fields(obj):
        object.__setattr__(new, f.name, getattr(obj, f.name))
    if len(path) == 1:
        object.__setattr__(new, real, value)
    else:
        object.__setattr__(new, real, _set_unvalidated(getattr(obj, real), path[1:], value))
    return new


def _revalidate(obj):
    kwargs = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        kwargs[f.name] = _revalidate(v) if is_dataclass(v) else v
    return type(obj)(**kwargs)


def load(path: Union[str, Path], base: Settings = None) -> Settings:
    path = Path(path)
    return parse(path.read_text(), base, str(path))


def dump_defaults(settings: Settings = None) -> str:
    lines = []
    group = None
    for key, value in flatten(settings or Settings()).items():
        head = key.split(".", 1)[0]
        if head != group:
            if group is not None:
                lines.append("")
            lines.append(f"# {head}")
            group = head
        if isinstance(value, enum.Enum):
            value = value.value
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
