"""Experiment runs: coverage and search-and-rescue."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..bus import write_bus_csv
from ..fsm import write_transition_csv
from .config import WorldConfig
from .world import POSITIONS_CSV_HEADER, UAV, World, init_world, tick

INF = math.inf
RESULTS_CSV_HEADER = ("seed", "kind", "key", "found", "assigned", "rescued")


class TickCapExceeded(RuntimeError):
    def __init__(self, result: RunResult):
        self.result = result
        super().__init__(f"seed {result.seed}: tick cap reached after {result.total_ticks} ticks")


@dataclass(frozen=True)
class TargetTimes:
    id: int
    found: float
    assigned: float
    rescued: float


@dataclass(frozen=True)
class RunResult:
    """Times are ticks counted from the mission start; ``inf`` if never reached."""

    seed: int
    thresholds: tuple[float, ...]
    coverage_times: tuple[float, ...]
    targets: tuple[TargetTimes, ...]
    mission_start: int
    total_ticks: int
    complete: bool
    world: Optional[World] = field(default=None, compare=False, repr=False)

    @property
    def found_ticks(self) -> list[float]:
        return [t.found for t in self.targets]

    @property
    def rescued_ticks(self) -> list[float]:
        return [t.rescued for t in self.targets]


def _all_loitering(world: World) -> bool:
    return all(s == "Loitering" for s in world.leaf_states(UAV))


def _rel(tick_: Optional[int], start: int) -> float:
    return INF if tick_ is None else float(max(tick_ - start, 0))


def _run(config: WorldConfig, sar: bool, record: bool, strict: bool, models) -> RunResult:
    world = init_world(config, models=models, record=record)
    cap = config.effective_tick_cap
    thresholds = tuple(config.coverage_thresholds)
    patches = config.width * config.height
    need = [math.ceil(p * patches) for p in thresholds]
    times: list[float] = [INF] * len(need)
    nxt = 0
    start: Optional[int] = None
    world.inject("launch")
    targets = world.targets
    while world.tick < cap:
        tick(world)
        if start is None:
            if _all_loitering(world):
                world.inject("missionStart")
                start = world.tick
            continue
        t = world.tick - 1
        if sar:
            if not world.has_targets:
                break
        else:
            covered = world.covered
            while nxt < len(need) and covered >= need[nxt]:
                times[nxt] = float(t - start)
                nxt += 1
            if nxt == len(need):
                break
    if start is None:
        start = world.tick
    complete = (all(tg.rescued is not None for tg in targets) if sar else nxt == len(need))
    result = RunResult(
        seed=config.seed,
        thresholds=thresholds,
        coverage_times=tuple(times),
        targets=tuple(TargetTimes(tg.id, _rel(tg.found, start), _rel(tg.assigned, start),
                                  _rel(tg.rescued, start)) for tg in targets),
        mission_start=start,
        total_ticks=world.tick,
        complete=complete,
        world=world if record else None,
    )
    if strict and not complete:
        raise TickCapExceeded(result)
    return result


def run_coverage(config: WorldConfig, *, record: bool = False, strict: bool = False,
                 models=None) -> RunResult:
    """Launch, start the mission once every UAV loiters, and run until the
    largest coverage threshold is reached or the tick cap hits."""
    if config.target_count:
        raise ValueError("coverage runs take no targets")
    if config.uav_count < 1:
        raise ValueError("coverage runs need at least one UAV")
    return _run(config, False, record, strict, models)


def run_sar(config: WorldConfig, *, record: bool = False, strict: bool = False,
            models=None) -> RunResult:
    """Full search-and-rescue mission until every target is rescued."""
    if config.target_count < 1:
        raise ValueError("SAR runs need at least one target")
    if config.ugv_count != config.uav_count:
        raise ValueError("SAR runs need one UGV per UAV")
    return _run(config, True, record, strict, models)


def write_results_csv(result: RunResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULTS_CSV_HEADER)
    for p, t in zip(result.thresholds, result.coverage_times):
        w.writerow((result.seed, "coverage", repr(p), _fmt(t), "", ""))
    for tg in result.targets:
        w.writerow((result.seed, "target", tg.id, _fmt(tg.found), _fmt(tg.assigned), _fmt(tg.rescued)))


def _fmt(v: float) -> str:
    return "inf" if v == INF else str(int(v))


def write_logs(result: RunResult, log_dir) -> list[Path]:
    """Write positions, transitions, bus and results CSVs of a recorded run."""
    world = result.world
    if world is None:
        raise ValueError("run was not recorded")
    out = Path(log_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "positions.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSITIONS_CSV_HEADER)
        w.writerows((t, a, repr(x), repr(y), repr(h)) for t, a, x, y, h in world.position_log)
    paths.append(p)
    p = out / "transitions.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        write_transition_csv(world.transition_log, fh)
    paths.append(p)
    p = out / "bus.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        write_bus_csv(world.bus.log, fh)
    paths.append(p)
    p = out / "results.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        write_results_csv(result, fh)
    paths.append(p)
    return paths
