"""World configuration and its key-value file format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from ..model_io import ConfigError

FIRST = "first"
DEFAULT_THRESHOLDS = (0.5, 0.75, 0.875, 0.9375, 0.96875, 1.0)
DEFAULT_FRACTIONS = (FIRST, 0.5, 0.75, 0.9, 1.0)
MOBILITY_MODES = ("off", "random-step")

Level = Union[str, float]



@dataclass(frozen=True)
class WorldConfig:
    width: int = field(default=201, metadata={"key": "width", "kind": "int"})
    height: int = field(default=201, metadata={"key": "height", "kind": "int"})
    uav_count: int = field(default=1, metadata={"key": "uavCount", "kind": "int"})
    ugv_count: int = field(default=0, metadata={"key": "ugvCount", "kind": "int"})
    target_count: int = field(default=0, metadata={"key": "targetCount", "kind": "int"})
    uav_speed: float = field(default=1.0, metadata={"key": "uavSpeed", "kind": "real"})
    ugv_speed: float = field(default=1.0, metadata={"key": "ugvSpeed", "kind": "real"})
    uav_spacing: float = field(default=4.0, metadata={"key": "uavSpacing", "kind": "real"})
    fov_radius: int = field(default=1, metadata={"key": "fovRadius", "kind": "int"})
    seed: int = field(default=0, metadata={"key": "seed", "kind": "int"})
    target_mobility: str = field(default="off", metadata={"key": "targetMobility", "kind": "str"})
    coverage_thresholds: tuple[float, ...] = field(
        default=DEFAULT_THRESHOLDS, metadata={"key": "coverageThresholds", "kind": "reals"})
    target_fractions: tuple[Level, ...] = field(
        default=DEFAULT_FRACTIONS, metadata={"key": "targetFractions", "kind": "fractions"})
    tick_cap: Optional[int] = field(default=None, metadata={"key": "tickCap", "kind": "int?"})
    local_radius: float = field(default=5.0, metadata={"key": "localRadius", "kind": "real"})
    cruise_altitude: float = field(default=2.0, metadata={"key": "cruiseAltitude", "kind": "real"})
    bus_loss: float = field(default=0.0, metadata={"key": "busLoss", "kind": "real"})
    bus_delay: int = field(default=0, metadata={"key": "busDelay", "kind": "int"})
    uav_model: Optional[str] = field(default=None, metadata={"key": "uavModel", "kind": "path"})
    ugv_model: Optional[str] = field(default=None, metadata={"key": "ugvModel", "kind": "path"})

    @property
    def patches(self) -> int:
        return self.width * self.height

    @property
    def effective_tick_cap(self) -> int:
        if self.tick_cap is not None:
            return self.tick_cap
        return 100 * self.width * self.height // max(self.uav_count, 1)

    def uav_x(self, k: int) -> float:
        return self.width / 2 + (k - (self.uav_count - 1) / 2) * self.uav_spacing

    def validate(self) -> None:
        problems = []
        if self.width < 3 or self.height < 3:
            problems.append("width and height must be at least 3")
        for name in ("uav_count", "ugv_count", "target_count", "fov_radius", "bus_delay"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.uav_speed <= 0 or self.ugv_speed <= 0:
            problems.append("speeds must be positive")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if self.target_mobility not in MOBILITY_MODES:
            problems.append(f"targetMobility must be one of {', '.join(MOBILITY_MODES)}")
        th = self.coverage_thresholds
        if not th or any(not 0 < p <= 1 for p in th) or any(a >= b for a, b in zip(th, th[1:])):
            problems.append("coverageThresholds must be strictly increasing in (0, 1]")
        for f in self.target_fractions:
            if f != FIRST and not (isinstance(f, float) and 0 < f <= 1):
                problems.append(f"bad target fraction {f!r}")
        if self.tick_cap is not None and self.tick_cap < 1:
            problems.append("tickCap must be positive")
        if not 0 <= self.bus_loss <= 1:
            problems.append("busLoss must be in [0, 1]")
        if self.local_radius <= 0 or self.cruise_altitude <= 0:
            problems.append("localRadius and cruiseAltitude must be positive")
        if self.uav_count and self.width >= 3 and self.uav_spacing >= 0:
            lo, hi = self.uav_x(0), self.uav_x(self.uav_count - 1)
            if lo < 0 or hi >= self.width:
                problems.append(f"{self.uav_count} UAVs spaced {self.uav_spacing} do not fit in width {self.width}")
        if self.uav_spacing < 0:
            problems.append("uavSpacing must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_(self, **changes) -> WorldConfig:
        return replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            kind = f.metadata["kind"]
            if kind in ("reals", "fractions"):
                text = ", ".join(v if isinstance(v, str) else repr(float(v)) for v in value)
            elif kind == "real":
                text = repr(float(value))
            else:
                text = str(value)
            lines.append(f"{f.metadata['key']} = {text}")
        return "\n".join(lines) + "\n"


_BY_KEY = {f.metadata["key"]: f for f in fields(WorldConfig)}


def _convert(kind: str, raw: str, base_dir: Optional[Path]):
    if kind in ("int", "int?"):
        return int(raw, 10)
    if kind == "real":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    if kind == "str":
        return raw
    if kind == "path":
        p = Path(raw)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return str(p)
    if kind == "reals":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if kind == "fractions":
        out = []
        for x in raw.split(","):
            x = x.strip()
            if x:
                out.append(FIRST if x == FIRST else float(x))
        return tuple(out)
    raise AssertionError(kind)


def parse_world_config(text: str, base_dir=None) -> WorldConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unset keys keep
    their defaults. Relative model paths resolve against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else None
    values = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        f = _BY_KEY.get(key)
        if f is None:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        try:
            values[f.name] = _convert(f.metadata["kind"], raw, base)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
    cfg = WorldConfig(**values)
    cfg.validate()
    return cfg


def load_world_config(path) -> WorldConfig:
    path = Path(path)
    return parse_world_config(path.read_text(encoding="utf-8"), path.parent)


def fraction_rank(f: Level, m: int) -> int:
    """k = ceil(f * m) evaluated exactly on the decimal value of ``f``."""
    if f == FIRST:
        return 1
    k = math.ceil(Fraction(repr(float(f))) * m)
    return max(1, min(k, m))
