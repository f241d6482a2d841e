"""Grid world for the abstract coverage and search-and-rescue experiments.

Agents move in continuous coordinates over a ``width x height`` patch grid
(patch ``(i, j)`` spans ``[i, i+1) x [j, j+1)``). Agent ids: the command
station is 0, UAVs are ``1..n``, UGVs follow. UGV ``k`` is paired with UAV
``k``; a UAV may only assign its own UGV.
"""
from __future__ import annotations

import logging
import math
from array import array
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from ..behaviors import default_registry
from ..behaviors.sar import Command
from ..bus import SwarmBus
from ..fsm import (
    DONE,
    BehaviorModel,
    Event,
    MachineInstance,
    Position,
    Status,
    StepContext,
    build_machine,
    drain,
    step,
)
from ..model_io import ConfigError, load_model, parse_model
from . import rng as rngmod
from .config import WorldConfig

log = logging.getLogger(__name__)

UAV = "uav"
UGV = "ugv"
COMMAND_STATION = 0

HIDDEN = "hidden"
FOUND = "found"
ASSIGNED = "assigned"
RESCUED = "rescued"

POSITIONS_CSV_HEADER = ("tick", "agent", "x", "y", "heading")


class SimulationError(RuntimeError):
    pass


def builtin_model(name: str) -> BehaviorModel:
    text = resources.files("swarmforge.data.models").joinpath(name).read_text(encoding="utf-8")
    return parse_model(text, default_registry())


class Agent:
    __slots__ = ("id", "kind", "x", "y", "heading", "altitude", "speed", "home",
                 "partner", "machine", "rng", "known", "memory", "ctx", "last_patch")

    def __init__(self, agent_id: int, kind: str, x: float, y: float, heading: float, speed: float):
        self.id = agent_id
        self.kind = kind
        self.x = x
        self.y = y
        self.heading = heading
        self.altitude = 0.0
        self.speed = speed
        self.home = Position(x, y)
        self.partner: Optional[int] = None
        self.machine: Optional[MachineInstance] = None
        self.rng = None
        self.known: dict[int, str] = {}
        self.memory: dict = {}
        self.ctx: Optional[StepContext] = None
        self.last_patch = -1

    @property
    def position(self) -> Position:
        return Position(self.x, self.y)

    def __repr__(self) -> str:
        return f"Agent({self.id}, {self.kind}, x={self.x}, y={self.y})"


@dataclass
class Target:
    id: int
    x: float
    y: float
    state: str = HIDDEN
    found: Optional[int] = None
    assigned: Optional[int] = None
    rescued: Optional[int] = None

    @property
    def position(self) -> Position:
        return Position(self.x, self.y)


@dataclass
class World:
    config: WorldConfig
    agents: list[Agent]
    targets: list[Target]
    bus: SwarmBus
    tick: int = 0
    covered: int = 0
    grid: bytearray = field(default_factory=bytearray)
    position_log: Optional[list] = None
    transition_log: Optional[list] = None
    target_rng: object = None

    def __post_init__(self) -> None:
        c = self.config
        self.width = c.width
        self.height = c.height
        self.fov_radius = c.fov_radius
        self.local_radius = c.local_radius
        self.cruise_altitude = c.cruise_altitude
        if not self.grid:
            self.grid = bytearray(c.width * c.height)
        self.uavs = [a for a in self.agents if a.kind == UAV]
        self.ugvs = [a for a in self.agents if a.kind == UGV]
        self._by_id = {a.id: a for a in self.agents}
        self._cells: dict[int, list[int]] = {}
        # per patch: number of live targets within the FOV radius
        self._near = array("I", bytes(4 * c.width * c.height))
        self._live = 0
        for t in self.targets:
            if t.state != RESCUED:
                self._place(t, +1)
        self._fov_rows = [
            (dy, max(0, -dy)) for dy in range(-c.fov_radius, c.fov_radius + 1)
        ]

    # ----------------------------------------------------------------- view

    @property
    def has_targets(self) -> bool:
        return self._live > 0

    def agent(self, agent_id: int) -> Agent:
        return self._by_id[agent_id]

    def targets_in_fov(self, x: float, y: float) -> list[int]:
        """Live targets within the FOV of a UAV at ``(x, y)``, by id."""
        w = self.width
        px, py = int(x), int(y)
        if not self._near[py * w + px]:
            return []
        r = self.fov_radius
        found = []
        cells = self._cells
        for j in range(max(0, py - r), min(self.height, py + r + 1)):
            for i in range(max(0, px - r), min(w, px + r + 1)):
                ids = cells.get(j * w + i)
                if ids:
                    found.extend(ids)
        found.sort()
        return found

    def target_position(self, tid: int) -> Optional[Position]:
        if 0 <= tid < len(self.targets):
            return self.targets[tid].position
        return None

    def rover_bids(self, pos, requester_id: int) -> list[tuple[int, float]]:
        """Cost bids (ugv id, Euclidean distance) from idle UGVs the
        requester may assign."""
        bids = []
        for u in self.ugvs:
            if u.partner != requester_id or u.machine.status is not Status.RUNNING:
                continue
            if u.machine.active[0][-1].state.behavior_name != "Idle" or u.machine.queue:
                continue
            bids.append((u.id, math.hypot(pos[0] - u.x, pos[1] - u.y)))
        return bids

    def covered_fraction(self) -> float:
        return self.covered / (self.width * self.height)

    # ------------------------------------------------------------- internals

    def _place(self, t: Target, sign: int) -> None:
        w, h, r = self.width, self.height, self.fov_radius
        px, py = int(t.x), int(t.y)
        key = py * w + px
        if sign > 0:
            self._cells.setdefault(key, []).append(t.id)
            self._cells[key].sort()
        else:
            ids = self._cells[key]
            ids.remove(t.id)
            if not ids:
                del self._cells[key]
        near = self._near
        for j in range(max(0, py - r), min(h, py + r + 1)):
            for i in range(max(0, px - r), min(w, px + r + 1)):
                near[j * w + i] += sign
        self._live += sign

    def stamp(self, a: Agent) -> None:
        w = self.width
        px, py = int(a.x), int(a.y)
        cell = py * w + px
        if cell == a.last_patch:
            return
        a.last_patch = cell
        r = self.fov_radius
        x0 = px - r if px >= r else 0
        x1 = px + r + 1 if px + r < w else w
        grid = self.grid
        h = self.height
        for j in range(py - r if py >= r else 0, py + r + 1 if py + r < h else h):
            lo = j * w + x0
            hi = j * w + x1
            n = grid.count(0, lo, hi)
            if n:
                self.covered += n
                grid[lo:hi] = b"\x01" * (hi - lo)

    def apply(self, a: Agent, cmd: Command) -> None:
        x = a.x if cmd.x is None else cmd.x
        y = a.y if cmd.y is None else cmd.y
        if not (0.0 <= x < self.width and 0.0 <= y < self.height):
            raise SimulationError(f"agent {a.id} commanded outside the world: ({x}, {y})")
        a.x = x
        a.y = y
        if cmd.heading is not None:
            a.heading = cmd.heading
        if cmd.altitude is not None:
            a.altitude = cmd.altitude

    def observe(self, ev: Event) -> None:
        """Fold routed target events into the ground-truth target table."""
        name = ev.name
        if name not in ("targetFound", "targetAssigned", "targetRescued"):
            return
        tid = ev.get("targetId")
        if not isinstance(tid, int) or not 0 <= tid < len(self.targets):
            return
        t = self.targets[tid]
        now = self.tick
        if name == "targetFound":
            if t.state == HIDDEN:
                t.state, t.found = FOUND, now
        elif name == "targetAssigned":
            if t.state in (HIDDEN, FOUND):
                if t.found is None:
                    t.found = now
                t.state, t.assigned = ASSIGNED, now
        elif t.state != RESCUED:
            if t.found is None:
                t.found = now
            t.state, t.rescued = RESCUED, now
            self._place(t, -1)

    def route(self, a: Agent, events) -> None:
        q = a.machine.queue
        for ev in events:
            if ev.name == DONE:
                q.append(ev)
                continue
            self.observe(ev)
            q.append(ev)
            self.bus.broadcast(ev)

    def inject(self, name: str, **payload) -> Event:
        """Broadcast an event from the command station, stamped with the
        tick at which it will be dispatched."""
        ev = Event(name, self.tick, COMMAND_STATION, tuple(payload.items()))
        self.observe(ev)
        self.bus.broadcast(ev)
        return ev

    def move_targets(self) -> None:
        rng = self.target_rng
        for t in self.targets:
            if t.state == RESCUED:
                continue
            dx, dy = (int(v) - 1 for v in rng.integers(0, 3, size=2))
            nx = min(max(int(t.x) + dx, 0), self.width - 1) + 0.5
            ny = min(max(int(t.y) + dy, 0), self.height - 1) + 0.5
            if (nx, ny) != (t.x, t.y):
                self._place(t, -1)
                t.x, t.y = nx, ny
                self._place(t, +1)

    def leaf_states(self, kind: str = UAV) -> list[str]:
        out = []
        for a in self.agents:
            if a.kind == kind:
                m = a.machine
                out.append(m.active[0][-1].state.id if m.status is Status.RUNNING else "")
        return out


def init_world(config: WorldConfig, *, models: tuple[BehaviorModel, BehaviorModel] | None = None,
               registry=None, record: bool = False) -> World:
    """Build a world with every machine in its initial configuration."""
    config.validate()
    if config.target_count and config.uav_count == 0:
        raise ConfigError("targets need at least one UAV")
    registry = registry or default_registry()
    if models is None:
        uav_model = (load_model(config.uav_model, registry) if config.uav_model
                     else builtin_model("sar_uav.scxml"))
        ugv_model = (load_model(config.ugv_model, registry) if config.ugv_model
                     else builtin_model("rescue_ugv.scxml"))
    else:
        uav_model, ugv_model = models
    seed = config.seed
    n = config.uav_count
    agents: list[Agent] = []
    for k in range(n):
        heading = math.pi * (k + 1) / (n + 1)
        agents.append(Agent(k + 1, UAV, config.uav_x(k), 0.5, heading, config.uav_speed))
    for k in range(config.ugv_count):
        if k < n:
            x, y, partner = agents[k].x, agents[k].y, agents[k].id
        else:
            x, y, partner = config.width / 2, 0.5, None
        u = Agent(n + k + 1, UGV, x, y, math.pi / 2, config.ugv_speed)
        u.partner = partner
        agents.append(u)

    trng = rngmod.stream(seed, rngmod.TARGETS)
    targets = []
    if config.target_count:
        xs = trng.integers(0, config.width, size=config.target_count)
        ys = trng.integers(0, config.height, size=config.target_count)
        targets = [Target(i, int(x) + 0.5, int(y) + 0.5) for i, (x, y) in enumerate(zip(xs, ys))]

    bus_rng = rngmod.stream(seed, rngmod.BUS) if config.bus_loss > 0 else None
    bus = SwarmBus(loss=config.bus_loss, delay=config.bus_delay, rng=bus_rng, record=record)
    tlog = [] if record else None
    world = World(config, agents, targets, bus,
                  position_log=[] if record else None, transition_log=tlog,
                  target_rng=rngmod.stream(seed, rngmod.MOBILITY))
    for a in agents:
        model = uav_model if a.kind == UAV else ugv_model
        a.machine = build_machine(model, registry, a.id, log_sink=tlog)
        a.rng = rngmod.agent_stream(seed, a.id)
        a.ctx = StepContext(agent=a, world=world, rng=a.rng, sender=a.id)
        bus.subscribe(a.id, a.machine.queue.append)
    return world


_EMPTY: list = []


def tick(world: World) -> None:
    """Advance the world by one tick."""
    t = world.tick
    bus = world.bus
    if bus.delay:
        bus.flush(t)
    plog = world.position_log
    for a in world.agents:
        m = a.machine
        ctx = a.ctx
        ctx.tick = t
        if m.queue:
            if m.status is Status.RUNNING:
                ctx.inbox = drain(m, ctx)
            else:
                m.queue.clear()
        elif ctx.inbox:
            ctx.inbox = _EMPTY
        if m.status is Status.RUNNING:
            emitted = step(m, ctx)
            if emitted:
                world.route(a, emitted)
            cmds = ctx.commands
            if cmds:
                for cmd in cmds:
                    world.apply(a, cmd)
                cmds.clear()
        if a.kind == UAV:
            world.stamp(a)
        if plog is not None:
            plog.append((t, a.id, a.x, a.y, a.heading))
    if world.config.target_mobility == "random-step" and world.has_targets:
        world.move_targets()
    world.tick = t + 1


def covered_fraction(world: World) -> float:
    return world.covered_fraction()
