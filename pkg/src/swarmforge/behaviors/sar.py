"""Tick functions for the search-and-rescue mission behaviors.

Every tick function takes a :class:`~swarmforge.fsm.StepContext` and
returns ``None`` or ``(command, events)``. Tick functions never mutate the
world; the simulator applies the returned :class:`Command`. The agent's
``known`` table and ``memory`` dict are agent-private and may be written.

Headings are radians counter-clockwise from east; north is +y.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

from ..fsm import MissingInput, Position

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi
SPIRAL_PITCH = 1.0 / TWO_PI  # radius grows one patch per full turn
ARRIVAL_EPS = 1e-9  # absorbs rounding when the remaining distance is a whole step

# target states in an agent's local table
DETECTED = "detected"
ASSIGNED = "assigned"
RESCUED = "rescued"
LOST = "lost"
_RANK = {LOST: 0, DETECTED: 1, ASSIGNED: 2, RESCUED: 3}


class Command(NamedTuple):
    """Requested pose change; ``None`` fields stay unchanged."""

    x: Optional[float] = None
    y: Optional[float] = None
    heading: Optional[float] = None
    altitude: Optional[float] = None


class NoIdleRover(Exception):
    pass


class Assignment(NamedTuple):
    target_id: int
    ugv_id: int
    cost: float


# --------------------------------------------------------------------------
# geometry helpers


def patch_of(x: float, y: float) -> tuple[int, int]:
    return int(math.floor(x)), int(math.floor(y))


def in_fov(ax: float, ay: float, tx: float, ty: float, radius: int = 1) -> bool:
    """Chebyshev patch distance between the two patches is at most ``radius``."""
    return (abs(math.floor(ax) - math.floor(tx)) <= radius
            and abs(math.floor(ay) - math.floor(ty)) <= radius)


def move_toward(x: float, y: float, tx: float, ty: float, speed: float):
    """Straight-line step; returns ``(x, y, heading, arrived)``.

    The mover lands exactly on the goal when it is within one step, so a
    static goal at distance ``d`` is reached on step ``ceil(d / speed)``.
    """
    dx, dy = tx - x, ty - y
    dist = math.hypot(dx, dy)
    if dist <= speed + ARRIVAL_EPS:
        heading = math.atan2(dy, dx) if dist > 0 else None
        return tx, ty, heading, True
    f = speed / dist
    return x + dx * f, y + dy * f, math.atan2(dy, dx), False


_NORTH, _SOUTH, _EAST, _WEST = 1, 2, 4, 8

# allowed heading arc (start, length) given the set of walls to stay off
_ARCS = {
    _NORTH: (math.pi, math.pi),
    _SOUTH: (0.0, math.pi),
    _EAST: (HALF_PI, math.pi),
    _WEST: (-HALF_PI, math.pi),
    _NORTH | _EAST: (math.pi, HALF_PI),
    _NORTH | _WEST: (1.5 * math.pi, HALF_PI),
    _SOUTH | _EAST: (HALF_PI, HALF_PI),
    _SOUTH | _WEST: (0.0, HALF_PI),
}


def _walls(nx: float, ny: float, width: float, height: float) -> int:
    w = 0
    if ny >= height:
        w |= _NORTH
    elif ny < 0:
        w |= _SOUTH
    if nx >= width:
        w |= _EAST
    elif nx < 0:
        w |= _WEST
    return w


def inward_heading(x: float, y: float, heading: float, speed: float,
                   width: float, height: float, rng) -> float:
    """Draw a new heading uniformly from the inward half-plane of the wall(s)
    the current heading would cross; narrows to a quadrant at corners."""
    walls = _walls(x + speed * math.cos(heading), y + speed * math.sin(heading), width, height)
    if not walls:
        return heading
    for _ in range(64):
        start, length = _ARCS[walls]
        theta = (start + rng.random() * length) % TWO_PI
        extra = _walls(x + speed * math.cos(theta), y + speed * math.sin(theta), width, height)
        if not extra:
            return theta
        walls |= extra
        if (walls & _NORTH and walls & _SOUTH) or (walls & _EAST and walls & _WEST):
            break
    # world narrower than one step: head for the centre
    return math.atan2(height / 2 - y, width / 2 - x) % TWO_PI


def _need(ctx, key):
    try:
        return ctx.blackboard[key]
    except KeyError:
        raise MissingInput(f"{ctx.state}: blackboard has no {key!r}") from None


def _announceable(known: dict, tid: int) -> bool:
    state = known.get(tid)
    return state is None or state == LOST


# --------------------------------------------------------------------------
# hardware functions


def idle_tick(ctx):
    return None


def take_off_tick(ctx):
    target = ctx.blackboard.get("altitude", ctx.world.cruise_altitude)
    alt = ctx.agent.altitude
    if alt < target:
        alt = min(target, alt + 1.0)
    if alt >= target:
        return Command(altitude=alt), (ctx.done(),)
    return Command(altitude=alt), ()


def mission_abort_tick(ctx):
    alt = max(0.0, ctx.agent.altitude - 1.0)
    if alt <= 0.0:
        return Command(altitude=0.0), (ctx.done(),)
    return Command(altitude=alt), ()


def return_home_tick(ctx):
    a = ctx.agent
    hx, hy = a.home
    nx, ny, heading, arrived = move_toward(a.x, a.y, hx, hy, a.speed)
    cmd = Command(nx, ny, heading)
    return cmd, ((ctx.done(),) if arrived else ())


def move_to_target_tick(ctx):
    tid = _need(ctx, "targetId")
    goal = _need(ctx, "position")
    a = ctx.agent
    nx, ny, heading, arrived = move_toward(a.x, a.y, goal[0], goal[1], a.speed)
    cmd = Command(nx, ny, heading)
    if arrived:
        return cmd, (ctx.event("targetRescued", targetId=tid),)
    return cmd, ()


# --------------------------------------------------------------------------
# swarm behaviors


def coverage_tick(ctx):
    """Random direction: fly straight, redraw the heading at the boundary."""
    a = ctx.agent
    w = ctx.world
    heading = a.heading
    speed = a.speed
    nx = a.x + speed * math.cos(heading)
    ny = a.y + speed * math.sin(heading)
    if not (0.0 <= nx < w.width and 0.0 <= ny < w.height):
        heading = inward_heading(a.x, a.y, heading, speed, w.width, w.height, ctx.rng)
        nx = a.x + speed * math.cos(heading)
        ny = a.y + speed * math.sin(heading)
    cmd = Command(nx, ny, heading)
    if w.has_targets:
        known = a.known
        for tid in w.targets_in_fov(nx, ny):
            if _announceable(known, tid):
                pos = w.target_position(tid)
                ctx.blackboard["targetId"] = tid
                ctx.blackboard["position"] = pos
                return cmd, (ctx.event("targetFound", targetId=tid, position=pos),)
    return cmd, ()


def tracking_tick(ctx):
    """Hover over the tracked target, reporting patch changes."""
    tid = _need(ctx, "targetId")
    a = ctx.agent
    w = ctx.world
    true_pos = w.target_position(tid)
    if true_pos is None:
        return None
    nx, ny, heading, _ = move_toward(a.x, a.y, true_pos.x, true_pos.y, a.speed)
    cmd = Command(nx, ny, a.heading)
    known_pos = ctx.blackboard.get("position")
    if not in_fov(nx, ny, true_pos.x, true_pos.y, w.fov_radius):
        last = known_pos if known_pos is not None else true_pos
        return cmd, (ctx.event("targetLost", targetId=tid, lastPosition=last),)
    if known_pos is None or patch_of(*known_pos) != patch_of(*true_pos):
        ctx.blackboard["position"] = true_pos
        return cmd, (ctx.event("targetUpdate", targetId=tid, position=true_pos),)
    return cmd, ()


def local_coverage_tick(ctx):
    """Outward Archimedean spiral around the last known target position."""
    centre = _need(ctx, "lastPosition")
    a = ctx.agent
    w = ctx.world
    mem = a.memory
    if ctx.fresh or "spiral" not in mem:
        mem["spiral"] = [0.0, a.x == centre[0] and a.y == centre[1]]
    spiral = mem["spiral"]
    theta, centred = spiral
    heading = a.heading
    if not centred:
        nx, ny, hd, arrived = move_toward(a.x, a.y, centre[0], centre[1], a.speed)
        if hd is not None:
            heading = hd
        spiral[1] = arrived
    else:
        r = SPIRAL_PITCH * theta
        theta += a.speed / math.hypot(r, SPIRAL_PITCH)
        r = SPIRAL_PITCH * theta
        nx = centre[0] + r * math.cos(theta)
        ny = centre[1] + r * math.sin(theta)
        heading = (theta + HALF_PI) % TWO_PI
        spiral[0] = theta
    nx = min(max(nx, 0.0), math.nextafter(w.width, 0.0))
    ny = min(max(ny, 0.0), math.nextafter(w.height, 0.0))
    cmd = Command(nx, ny, heading)
    lost_id = ctx.blackboard.get("targetId")
    found = None
    for tid in w.targets_in_fov(nx, ny):
        if tid == lost_id or _announceable(a.known, tid):
            if tid == lost_id or found is None:
                found = tid
            if tid == lost_id:
                break
    if found is not None:
        pos = w.target_position(found)
        ctx.blackboard["targetId"] = found
        ctx.blackboard["position"] = pos
        return cmd, (ctx.event("targetFound", targetId=found, position=pos),)
    if SPIRAL_PITCH * spiral[0] >= w.local_radius:
        return cmd, (ctx.done(),)
    return cmd, ()


def spiral_tick_bound(radius: float, speed: float) -> int:
    """Upper bound on spiral ticks: ceil(2*pi*R^2/speed)."""
    return math.ceil(TWO_PI * radius * radius / speed)


# --------------------------------------------------------------------------
# swarm functions


def select_rover(target_id: int, position: Position, bids) -> Assignment:
    """Pick the minimum-cost bid; ties go to the lowest UGV id."""
    if not bids:
        raise NoIdleRover(target_id)
    ugv, cost = min(bids, key=lambda b: (b[1], b[0]))
    return Assignment(target_id, ugv, cost)


def select_rover_tick(ctx):
    tid = _need(ctx, "targetId")
    pos = _need(ctx, "position")
    bids = ctx.world.rover_bids(pos, ctx.agent.id)
    try:
        choice = select_rover(tid, pos, bids)
    except NoIdleRover:
        return None
    ctx.blackboard["ugvId"] = choice.ugv_id
    return None, (ctx.event("targetAssigned", targetId=tid, ugvId=choice.ugv_id, position=pos),)


def target_monitoring_observe(ctx, event) -> None:
    """Fold target events into the agent's local table (never downgrades)."""
    name = event.name
    if name == "targetFound":
        new = DETECTED
    elif name == "targetAssigned":
        new = ASSIGNED
    elif name == "targetRescued":
        new = RESCUED
    elif name == "targetLost":
        new = LOST
    else:
        return
    tid = event.get("targetId")
    if tid is None:
        return
    known = ctx.agent.known
    old = known.get(tid)
    if new == LOST:
        if old in (None, DETECTED, ASSIGNED):
            known[tid] = LOST
    elif old is None or _RANK[new] > _RANK[old]:
        known[tid] = new
