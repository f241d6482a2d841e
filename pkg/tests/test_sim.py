import csv
import math

import pytest

from conftest import mission, relocate
from oracles import coverage_replay, first_crossings, straight_rescue_ticks
from swarmforge.model_io import ConfigError
from swarmforge.sim import (
    TickCapExceeded,
    WorldConfig,
    covered_fraction,
    init_world,
    parse_world_config,
    run_coverage,
    run_sar,
    tick,
    write_logs,
)
from swarmforge.sim.config import fraction_rank
from swarmforge.sim.world import FOUND, HIDDEN, RESCUED, ASSIGNED, UAV, UGV

SMALL = WorldConfig(width=41, height=41)


# ------------------------------------------------------------------ init


def test_single_uav_start_pose():
    w = init_world(WorldConfig())
    (a,) = w.agents
    assert (a.x, a.y) == (100.5, 0.5)
    assert math.degrees(a.heading) == pytest.approx(90.0)


def test_two_uav_start_poses():
    w = init_world(WorldConfig(uav_count=2, ugv_count=2))
    uavs = [a for a in w.agents if a.kind == UAV]
    ugvs = [a for a in w.agents if a.kind == UGV]
    assert [a.x for a in uavs] == [98.5, 102.5]
    assert [round(math.degrees(a.heading), 9) for a in uavs] == [60.0, 120.0]
    assert [(u.x, u.y, u.partner) for u in ugvs] == [(98.5, 0.5, 1), (102.5, 0.5, 2)]
    assert [a.id for a in w.agents] == [1, 2, 3, 4]


def test_pure_coverage_world():
    w = init_world(WorldConfig(uav_count=3))
    assert w.targets == [] and all(a.kind == UAV for a in w.agents)
    assert covered_fraction(w) == 0.0


def test_targets_on_patch_centres_and_seeded():
    a = init_world(WorldConfig(target_count=20, ugv_count=1, seed=5))
    b = init_world(WorldConfig(target_count=20, ugv_count=1, seed=5))
    c = init_world(WorldConfig(target_count=20, ugv_count=1, seed=6))
    assert [(t.x, t.y) for t in a.targets] == [(t.x, t.y) for t in b.targets]
    assert [(t.x, t.y) for t in a.targets] != [(t.x, t.y) for t in c.targets]
    assert all(t.x % 1 == 0.5 and t.y % 1 == 0.5 for t in a.targets)


def test_too_many_uavs_rejected():
    with pytest.raises(ConfigError, match="do not fit"):
        init_world(WorldConfig(width=11, height=11, uav_count=4))


def test_agent_streams_do_not_shift_when_agents_added():
    a = init_world(WorldConfig(uav_count=2, ugv_count=2, seed=9))
    b = init_world(WorldConfig(uav_count=3, ugv_count=3, seed=9))
    assert a.agents[0].rng.random() == b.agents[0].rng.random()


# ------------------------------------------------------------------ tick


def test_first_stamp_covers_six_patches():
    w = init_world(WorldConfig())
    tick(w)
    assert covered_fraction(w) == 6 / 40401


def test_empty_world_only_advances_tick():
    w = init_world(WorldConfig(uav_count=0))
    grid = bytes(w.grid)
    for _ in range(5):
        tick(w)
    assert w.tick == 5 and w.covered == 0 and bytes(w.grid) == grid


def test_three_by_three_world_is_covered_immediately():
    r = run_coverage(WorldConfig(width=3, height=3))
    assert r.complete and r.coverage_times == (0.0,) * 6


def test_no_coverage_growth_after_abort():
    w = init_world(SMALL)
    mission(w, max_ticks=40)
    w.inject("missionAbort")
    for _ in range(5):
        tick(w)
    assert w.agents[0].altitude == 0.0
    assert w.leaf_states(UAV) == [""]
    covered, pos = w.covered, (w.agents[0].x, w.agents[0].y)
    for _ in range(50):
        tick(w)
    assert w.covered == covered and (w.agents[0].x, w.agents[0].y) == pos


def test_mission_start_waits_for_takeoff():
    r = run_coverage(SMALL.with_(seed=3))
    assert r.mission_start == 3


def test_out_of_bounds_command_is_an_error():
    from swarmforge.behaviors.sar import Command
    from swarmforge.sim import SimulationError
    w = init_world(SMALL)
    with pytest.raises(SimulationError):
        w.apply(w.agents[0], Command(x=41.0))


# ------------------------------------------------------------ SAR checks


def _sar_world(target, **kw):
    w = init_world(WorldConfig(ugv_count=1, target_count=1, **kw), record=True)
    relocate(w, 0, *target)
    return w


def test_target_in_initial_fov_found_at_start():
    w = _sar_world((100.5, 1.5))
    start = mission(w)
    t = w.targets[0]
    assert t.found == start and t.state == RESCUED


@pytest.mark.parametrize("target", [(100.5, 7.5), (101.5, 10.5), (100.5, 2.5), (99.5, 30.5)])
def test_rescue_offset_matches_straight_line_oracle(target):
    w = _sar_world(target)
    mission(w)
    t = w.targets[0]
    ugv = w.agents[1]
    d = math.hypot(target[0] - ugv.home.x, target[1] - ugv.home.y)
    assert t.rescued - t.assigned == straight_rescue_ticks(d)
    assert t.found <= t.assigned <= t.rescued


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("mobility", ["off", "random-step"])
def test_sar_invariants(seed, mobility):
    cfg = SMALL.with_(uav_count=2, ugv_count=2, target_count=5, seed=seed, target_mobility=mobility)
    w = init_world(cfg, record=True)
    w.inject("launch")
    last_cov = 0
    states = {t.id: [t.state] for t in w.targets}
    order = [HIDDEN, FOUND, ASSIGNED, RESCUED]
    started = False
    while w.has_targets and w.tick < cfg.effective_tick_cap:
        tick(w)
        if not started and all(s == "Loitering" for s in w.leaf_states(UAV)):
            w.inject("missionStart")
            started = True
        assert w.covered >= last_cov
        last_cov = w.covered
        for t in w.targets:
            if states[t.id][-1] != t.state:
                states[t.id].append(t.state)
    assert not w.has_targets
    for seq in states.values():
        idx = [order.index(s) for s in seq]
        assert idx == sorted(idx)
    for _, _, x, y, _ in w.position_log:
        assert 0 <= x < cfg.width and 0 <= y < cfg.height
    rescues = {(r.timestamp, r.sender) for r in w.bus.log if r.event == "targetRescued"}
    assert len(rescues) == cfg.target_count


def test_run_sar_result_shape():
    r = run_sar(SMALL.with_(uav_count=2, ugv_count=2, target_count=6, seed=11))
    assert r.complete and len(r.targets) == 6
    for t in r.targets:
        assert t.found <= t.assigned <= t.rescued < math.inf


def test_sar_preconditions():
    with pytest.raises(ValueError):
        run_sar(SMALL.with_(target_count=0, ugv_count=1))
    with pytest.raises(ValueError):
        run_sar(SMALL.with_(target_count=2, ugv_count=0))
    with pytest.raises(ValueError):
        run_coverage(SMALL.with_(target_count=2, ugv_count=1))


# -------------------------------------------------------------- coverage


@pytest.mark.parametrize("seed", [0, 42])
def test_coverage_oracle_replay(seed):
    cfg = SMALL.with_(uav_count=2, seed=seed)
    r = run_coverage(cfg, record=True)
    counts = coverage_replay(r.world.position_log, {1, 2}, cfg.width, cfg.height)
    assert counts[-1] == r.world.covered
    assert covered_fraction(r.world) == counts[-1] / cfg.patches
    assert tuple(first_crossings(counts, cfg.coverage_thresholds, cfg.patches, r.mission_start)) == r.coverage_times


def test_coverage_times_monotone():
    for seed in range(5):
        times = run_coverage(SMALL.with_(seed=seed)).coverage_times
        assert list(times) == sorted(times)


def test_straight_lines_between_turns():
    r = run_coverage(SMALL.with_(seed=2), record=True)
    rows = [(x, y, h) for _, a, x, y, h in r.world.position_log if a == 1][r.mission_start:]
    seg = [rows[0]]
    for row in rows[1:]:
        if row[2] != seg[0][2]:
            seg = [row]
            continue
        x0, y0, h = seg[0]
        cross = (row[0] - x0) * math.sin(h) - (row[1] - y0) * math.cos(h)
        assert abs(cross) < 1e-9
        seg.append(row)


def test_tick_cap_records_infinity():
    cfg = SMALL.with_(tick_cap=50)
    r = run_coverage(cfg)
    assert not r.complete and r.total_ticks == 50
    assert r.coverage_times[-1] == math.inf
    with pytest.raises(TickCapExceeded) as info:
        run_coverage(cfg, strict=True)
    assert info.value.result == r


def test_default_tick_cap():
    assert WorldConfig().effective_tick_cap == 4040100
    assert WorldConfig(uav_count=8).effective_tick_cap == 505012


def test_runs_are_deterministic():
    cfg = SMALL.with_(uav_count=2, ugv_count=2, target_count=4, seed=7, target_mobility="random-step")
    a = run_sar(cfg, record=True)
    b = run_sar(cfg, record=True)
    assert a == b
    assert a.world.transition_log == b.world.transition_log
    assert a.world.position_log == b.world.position_log


def test_write_logs(tmp_path):
    r = run_sar(SMALL.with_(ugv_count=1, target_count=2, seed=1), record=True)
    paths = write_logs(r, tmp_path)
    assert [p.name for p in paths] == ["positions.csv", "transitions.csv", "bus.csv", "results.csv"]
    heads = [next(csv.reader(p.open())) for p in paths]
    assert heads == [["tick", "agent", "x", "y", "heading"],
                     ["tick", "machine", "event", "outcome", "from", "to"],
                     ["timestamp", "sender", "event", "subscriber", "status"],
                     ["seed", "kind", "key", "found", "assigned", "rescued"]]
    rows = list(csv.reader((tmp_path / "results.csv").open()))[1:]
    assert sum(row[1] == "target" for row in rows) == 2


def test_write_logs_needs_recording():
    with pytest.raises(ValueError):
        write_logs(run_coverage(WorldConfig(width=3, height=3)), "unused")


# ---------------------------------------------------------------- config


def test_parse_world_config_round_trip():
    cfg = WorldConfig(uav_count=4, ugv_count=4, target_count=8, seed=2**63, tick_cap=900,
                      target_fractions=("first", 0.25, 1.0), target_mobility="random-step")
    assert parse_world_config(cfg.to_text()) == cfg


def test_parse_world_config_comments_and_defaults():
    cfg = parse_world_config("# demo\nuavCount = 2  # two\n\nseed=7\n")
    assert cfg == WorldConfig(uav_count=2, seed=7)


@pytest.mark.parametrize("text,line", [
    ("width = 10\ncolour = red", 2),
    ("seed = 1\nseed = 2", 2),
    ("uavCount = two", 1),
    ("just words", 1),
])
def test_parse_world_config_errors(text, line):
    with pytest.raises(ConfigError) as info:
        parse_world_config(text)
    assert info.value.line == line


@pytest.mark.parametrize("change", [
    {"width": 2}, {"uav_speed": 0.0}, {"coverage_thresholds": (0.5, 0.5)},
    {"coverage_thresholds": (0.0, 1.0)}, {"target_mobility": "teleport"}, {"seed": -1},
    {"bus_loss": 1.5}, {"tick_cap": 0},
])
def test_invalid_world_configs(change):
    with pytest.raises(ConfigError):
        WorldConfig(**change).validate()


def test_fraction_rank_examples():
    assert fraction_rank(0.75, 2) == 2
    assert fraction_rank(0.75, 4) == 3
    assert fraction_rank("first", 32) == 1
    assert fraction_rank(0.1, 10) == 1
    assert fraction_rank(1.0, 7) == 7
