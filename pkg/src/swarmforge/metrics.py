"""Seed sweeps, confidence intervals and run-time statistics."""
from __future__ import annotations

import csv
import io
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from scipy import stats as _stats

from .model_io import ConfigError
from .sim.config import FIRST, Level, WorldConfig, fraction_rank, parse_world_config
from .sim.runs import INF, RunResult, run_coverage, run_sar

TICK_SECONDS = 0.5
SWEEP_CSV_HEADER = ("scenario", "uavCount", "targetCount", "metric", "level",
                    "mean", "halfwidth", "n", "incomplete", "error")
RUNS_CSV_HEADER = ("scenario", "uavCount", "targetCount", "seed", "metric", "level", "value")


class InsufficientSamples(ValueError):
    pass


class IncompleteRun(ValueError):
    pass


@dataclass(frozen=True)
class StatSummary:
    n: int
    mean: float
    halfwidth: float
    level: float = 0.95


def confidence_interval(samples: Sequence[float], level: float = 0.95) -> StatSummary:
    """Student-t interval: mean +- t_{(1+level)/2, n-1} * s / sqrt(n)."""
    n = len(samples)
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    mean = math.fsum(samples) / n
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    t = float(_stats.t.ppf((1.0 + level) / 2.0, n - 1))
    return StatSummary(n, mean, t * math.sqrt(var) / math.sqrt(n), level)


def sequential_stop(samples: Sequence[float], rel_err: float = 0.10, conf: float = 0.99) -> bool:
    """True once the relative half width drops below ``rel_err``."""
    if rel_err <= 0:
        raise ValueError("rel_err must be positive")
    if len(samples) < 2:
        return False
    s = confidence_interval(samples, conf)
    if s.mean == 0:
        return False
    return s.halfwidth / abs(s.mean) < rel_err


def sar_percentile_times(result: RunResult, fractions: Iterable[Level]) -> list[tuple[Level, float, float]]:
    """Per fraction f: the k-th smallest found and rescued times, k = ceil(f*m)."""
    found = sorted(result.found_ticks)
    rescued = sorted(result.rescued_ticks)
    if not found or not result.complete or INF in rescued:
        raise IncompleteRun(f"seed {result.seed}: not every target was rescued")
    m = len(found)
    out = []
    for f in fractions:
        k = fraction_rank(f, m)
        out.append((f, found[k - 1], rescued[k - 1]))
    return out


# --------------------------------------------------------------------------
# sweeps

SCENARIOS = ("coverage", "sar")


@dataclass(frozen=True)
class SweepSpec:
    base: WorldConfig = field(default_factory=WorldConfig)
    scenario: str = "coverage"
    uav_counts: tuple[int, ...] = (1, 2, 4, 8)
    target_counts: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    repetitions: Optional[int] = 50
    rel_err: Optional[float] = None
    confidence: float = 0.99
    max_repetitions: int = 1000
    base_seed: int = 0
    level: float = 0.95

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}")
        if (self.repetitions is None) == (self.rel_err is None):
            raise ConfigError("set exactly one of repetitions and relErr")
        if self.repetitions is not None and self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.rel_err is not None and (self.rel_err <= 0 or not 0 < self.confidence < 1):
            raise ConfigError("relErr must be positive and confidence in (0, 1)")
        if not self.uav_counts or any(n < 1 for n in self.uav_counts):
            raise ConfigError("uavCounts must be positive")
        if self.scenario == "sar" and (not self.target_counts or any(m < 1 for m in self.target_counts)):
            raise ConfigError("targetCounts must be positive")
        if not 0 < self.level < 1:
            raise ConfigError("level must be in (0, 1)")
        if self.max_repetitions < 2:
            raise ConfigError("maxRepetitions must be at least 2")

    def points(self) -> list[tuple[int, int]]:
        targets = (0,) if self.scenario == "coverage" else tuple(self.target_counts)
        return [(n, m) for n in self.uav_counts for m in targets]

    def config_for(self, uavs: int, targets: int, seed: int) -> WorldConfig:
        ugvs = uavs if self.scenario == "sar" else 0
        return replace(self.base, uav_count=uavs, ugv_count=ugvs, target_count=targets, seed=seed)

    def metrics(self) -> list[tuple[str, object]]:
        if self.scenario == "coverage":
            return [("coverageTime", p) for p in self.base.coverage_thresholds]
        out = []
        for name in ("searchTime", "rescueTime"):
            out.extend((name, f) for f in self.base.target_fractions)
        return out


_SWEEP_KEYS = {
    "scenario": ("scenario", str),
    "uavCounts": ("uav_counts", "ints"),
    "targetCounts": ("target_counts", "ints"),
    "repetitions": ("repetitions", int),
    "relErr": ("rel_err", float),
    "confidence": ("confidence", float),
    "maxRepetitions": ("max_repetitions", int),
    "baseSeed": ("base_seed", int),
    "level": ("level", float),
}


def parse_sweep_spec(text: str, base_dir=None) -> SweepSpec:
    """Sweep keys plus any world-config key (applied to the base config)."""
    world_lines = []
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            world_lines.append("")
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if key in _SWEEP_KEYS:
            attr, conv = _SWEEP_KEYS[key]
            try:
                if conv == "ints":
                    values[attr] = tuple(int(v) for v in value.split(",") if v.strip())
                else:
                    values[attr] = conv(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
            world_lines.append("")
        else:
            world_lines.append(raw)
    base = parse_world_config("\n".join(world_lines), base_dir)
    if "rel_err" in values and "repetitions" not in values:
        values["repetitions"] = None
    spec = SweepSpec(base=base, **values)
    spec.validate()
    return spec


def load_sweep_spec(path) -> SweepSpec:
    path = Path(path)
    return parse_sweep_spec(path.read_text(encoding="utf-8"), path.parent)


@dataclass(frozen=True)
class RunOutcome:
    uavs: int
    targets: int
    seed: int
    result: Optional[RunResult]
    error: str = ""


def _execute(task) -> RunOutcome:
    scenario, config, uavs, targets = task
    try:
        if scenario == "coverage":
            result = run_coverage(config)
        else:
            result = run_sar(config)
        return RunOutcome(uavs, targets, config.seed, result)
    except Exception as exc:  # recorded per run, the sweep carries on
        return RunOutcome(uavs, targets, config.seed, None, f"seed {config.seed}: {type(exc).__name__}: {exc}")


def _samples(spec: SweepSpec, outcomes: list[RunOutcome]) -> dict[tuple[str, object], list[float]]:
    """Finite per-metric samples of the complete, error-free runs."""
    out: dict = defaultdict(list)
    for o in outcomes:
        r = o.result
        if r is None or not r.complete:
            continue
        for key, value in _run_values(spec, r):
            out[key].append(value)
    return out


def _run_values(spec: SweepSpec, r: RunResult):
    if spec.scenario == "coverage":
        for p, t in zip(r.thresholds, r.coverage_times):
            yield ("coverageTime", p), t
    else:
        rows = sar_percentile_times(r, spec.base.target_fractions)
        for f, s, _ in rows:
            yield ("searchTime", f), s
        for f, _, rt in rows:
            yield ("rescueTime", f), rt


def sweep_runs(spec: SweepSpec, workers: int = 1) -> dict[tuple[int, int], list[RunOutcome]]:
    """Execute every run of the sweep; outcomes are listed in seed order."""
    spec.validate()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    mapper = pool.map if pool is not None else map
    try:
        out: dict[tuple[int, int], list[RunOutcome]] = {}
        for n, m in spec.points():
            def tasks(lo, hi):
                return [(spec.scenario, spec.config_for(n, m, spec.base_seed + i), n, m) for i in range(lo, hi)]

            if spec.repetitions is not None:
                out[(n, m)] = list(mapper(_execute, tasks(0, spec.repetitions)))
                continue
            # sequential stopping: evaluate prefixes in seed order so the
            # stopping point does not depend on the batch size
            done: list[RunOutcome] = []
            batch = max(workers, 1)
            stopped = False
            while not stopped and len(done) < spec.max_repetitions:
                hi = min(len(done) + batch, spec.max_repetitions)
                for o in mapper(_execute, tasks(len(done), hi)):
                    done.append(o)
                    if _converged(spec, done):
                        stopped = True
                        break
            out[(n, m)] = done
        return out
    finally:
        if pool is not None:
            pool.shutdown()


def _converged(spec: SweepSpec, outcomes: list[RunOutcome]) -> bool:
    samples = _samples(spec, outcomes)
    if not samples:
        return False
    return all(sequential_stop(samples.get(k, []), spec.rel_err, spec.confidence)
               for k in spec.metrics())


@dataclass(frozen=True)
class SweepRow:
    scenario: str
    uavs: int
    targets: int
    metric: str
    level: object
    mean: Optional[float]
    halfwidth: Optional[float]
    n: int
    incomplete: int
    error: str

    def csv_fields(self) -> tuple:
        return (self.scenario, self.uavs, self.targets, self.metric, _fmt_level(self.level),
                _fmt_num(self.mean), _fmt_num(self.halfwidth), self.n, self.incomplete, self.error)


def _fmt_level(level) -> str:
    return level if level == FIRST else repr(float(level))


def _fmt_num(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def summarize(values: Sequence[float], level: float) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    if len(values) == 1:
        return float(values[0]), None
    s = confidence_interval(values, level)
    return s.mean, s.halfwidth


def aggregate(spec: SweepSpec, runs: dict[tuple[int, int], list[RunOutcome]]) -> list[SweepRow]:
    rows = []
    for key in sorted(runs):
        outcomes = sorted(runs[key], key=lambda o: o.seed)
        samples = _samples(spec, outcomes)
        incomplete = sum(1 for o in outcomes if o.result is not None and not o.result.complete)
        error = "; ".join(o.error for o in outcomes if o.error)
        for metric, level in spec.metrics():
            vals = samples.get((metric, level), [])
            mean, hw = summarize(vals, spec.level)
            rows.append(SweepRow(spec.scenario, key[0], key[1], metric, level, mean, hw,
                                 len(vals), incomplete, error))
    return rows


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[SweepRow]:
    return aggregate(spec, sweep_runs(spec, workers))


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def runs_csv(spec: SweepSpec, runs: dict[tuple[int, int], list[RunOutcome]]) -> str:
    """One row per (run, metric, level) of every complete run."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUNS_CSV_HEADER)
    for key in sorted(runs):
        for o in sorted(runs[key], key=lambda o: o.seed):
            if o.result is None or not o.result.complete:
                continue
            for (metric, level), v in _run_values(spec, o.result):
                w.writerow((spec.scenario, o.uavs, o.targets, o.seed, metric, _fmt_level(level), repr(float(v))))
    return buf.getvalue()


def stats_from_runs_csv(text: str, level: float = 0.95):
    """Group rows by every column except ``seed`` and ``value``.

    Returns the grouping column names and ``(group, n, mean, halfwidth)``
    tuples in first-seen order.
    """
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "value" not in reader.fieldnames:
        raise ValueError("input CSV needs a 'value' column")
    keys = [k for k in reader.fieldnames if k not in ("seed", "value")]
    groups: dict[tuple[str, ...], list[float]] = {}
    for row in reader:
        groups.setdefault(tuple(row[k] for k in keys), []).append(float(row["value"]))
    out = []
    for g, vals in groups.items():
        mean, hw = summarize(vals, level)
        out.append((g, len(vals), mean, hw))
    return keys, out


# --------------------------------------------------------------------------
# real-time factor


@dataclass(frozen=True)
class RtfSample:
    t_sim: float
    t_wall: float

    def __post_init__(self) -> None:
        if self.t_wall <= 0:
            raise ValueError("t_wall must be positive")

    @property
    def gamma(self) -> float:
        return self.t_sim / self.t_wall


def measure_rtf(run: Callable[[], object], tick_seconds: float = TICK_SECONDS,
                clock: Callable[[], float] = time.monotonic) -> RtfSample:
    """Time ``run``; it returns a tick count or a :class:`RunResult`."""
    t0 = clock()
    out = run()
    t1 = clock()
    ticks = out.total_ticks if isinstance(out, RunResult) else out
    wall = t1 - t0
    if wall <= 0:
        wall = 1e-9
    return RtfSample(ticks * tick_seconds, wall)
