"""Hierarchical, event-driven behavior state machines.

A :class:`BehaviorModel` is a static description: one or more top-level
regions (executed side by side), each holding sibling :class:`StateNode`
objects. Only ``ComplexBehavior`` states may nest children. A
:class:`MachineInstance` runs a model against a behavior registry.

Transition selection walks every active path outermost-first, regions in
document order, and fires the first transition whose trigger matches and
whose guard holds. Firing on a composite state tears down its whole active
subtree, which is how abort-style events preempt running behaviors.
"""
from __future__ import annotations

import csv
import enum
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, NamedTuple, Union

log = logging.getLogger(__name__)

IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")

#: Internal completion event emitted by behaviors that finish on their own
#: (unlabeled transitions such as TakeOff -> Loitering).
DONE = "__done__"
RESERVED_EVENTS = frozenset({DONE})

U64_MAX = 2**64 - 1


class Position(NamedTuple):
    """A 2-D position in patch units."""

    x: float
    y: float


Scalar = Union[int, float, str, Position]

VALUE_KINDS = ("int", "real", "string", "position")


def kind_of(value: Any) -> str:
    if isinstance(value, bool):
        raise TypeError("booleans are not valid scalars")
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "real"
    if isinstance(value, str):
        return "string"
    if isinstance(value, Position):
        return "position"
    raise TypeError(f"unsupported scalar type {type(value).__name__}")


def valid_event_name(name: str) -> bool:
    return name in RESERVED_EVENTS or bool(IDENT.match(name))


@dataclass(frozen=True)
class Event:
    """A coordination message exchanged between CPSs.

    Identity is the ``(name, sender, timestamp)`` triple. ``timestamp`` is a
    simulation tick in simulated runs and milliseconds in live use.
    """

    name: str
    timestamp: int = 0
    sender: int = 0
    payload: tuple[tuple[str, Scalar], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not valid_event_name(self.name):
            raise ValueError(f"invalid event name {self.name!r}")
        if not 0 <= self.timestamp <= U64_MAX:
            raise ValueError("timestamp out of u64 range")
        if not 0 <= self.sender <= U64_MAX:
            raise ValueError("sender out of u64 range")
        payload = tuple((k, v) for k, v in self.payload)
        keys = [k for k, _ in payload]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate payload keys in {keys}")
        for k, v in payload:
            if not isinstance(k, str) or not k:
                raise ValueError("payload keys must be non-empty strings")
            kind_of(v)
        object.__setattr__(self, "payload", payload)

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.payload:
            if k == key:
                return v
        return default

    def as_dict(self) -> dict[str, Scalar]:
        return dict(self.payload)

    @classmethod
    def make(cls, name: str, timestamp: int = 0, sender: int = 0, **payload: Scalar) -> Event:
        return cls(name, timestamp, sender, tuple(payload.items()))


class BehaviorType(enum.Enum):
    COMPLEX_BEHAVIOR = "ComplexBehavior"
    SWARM_BEHAVIOR = "SwarmBehavior"
    SWARM_FUNCTION = "SwarmFunction"
    HARDWARE_FUNCTION = "HardwareFunction"

    def __str__(self) -> str:
        return self.value


# --------------------------------------------------------------------------
# Guards

COMPARATORS: dict[str, Callable[[Any, Any], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}

_GUARD_RE = re.compile(r"\s*([A-Za-z][A-Za-z0-9_]*)\s*(==|!=|<|>)\s*(.+?)\s*\Z", re.S)


@dataclass(frozen=True)
class Ref:
    """Guard operand resolved at dispatch time: instance parameter first,
    then blackboard."""

    name: str

    def __str__(self) -> str:
        return "$" + self.name


@dataclass(frozen=True)
class Guard:
    key: str
    op: str
    literal: Union[int, float, str, Ref]

    def __post_init__(self) -> None:
        if self.op not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.op!r}")

    @classmethod
    def parse(cls, text: str) -> Guard:
        m = _GUARD_RE.match(text)
        if not m:
            raise ValueError(f"malformed guard {text!r}")
        key, op, raw = m.groups()
        return cls(key, op, _parse_literal(raw))

    def __str__(self) -> str:
        lit = self.literal
        if isinstance(lit, str):
            text = '"' + lit.replace("\\", "\\\\").replace('"', '\\"') + '"'
        else:
            text = repr(lit) if isinstance(lit, float) else str(lit)
        return f"{self.key} {self.op} {text}"

    def holds(self, event: Event, instance: MachineInstance) -> bool:
        value = event.get(self.key, _MISSING)
        if value is _MISSING:
            if self.key != "sender":
                return False
            value = event.sender
        lit = self.literal
        if isinstance(lit, Ref):
            lit = instance.params.get(lit.name, instance.blackboard.get(lit.name, _MISSING))
            if lit is _MISSING:
                return False
        try:
            return COMPARATORS[self.op](value, lit)
        except TypeError:
            return False


_MISSING = object()


def _parse_literal(raw: str) -> Union[int, float, str, Ref]:
    if raw.startswith("$"):
        name = raw[1:]
        if not IDENT.match(name):
            raise ValueError(f"bad reference {raw!r}")
        return Ref(name)
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        body = raw[1:-1]
        out, i = [], 0
        while i < len(body):
            c = body[i]
            if c == "\\" and i + 1 < len(body):
                out.append(body[i + 1])
                i += 2
                continue
            if c == '"':
                raise ValueError(f"unescaped quote in {raw!r}")
            out.append(c)
            i += 1
        return "".join(out)
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"bad guard literal {raw!r}") from None


# --------------------------------------------------------------------------
# Static model


@dataclass(frozen=True)
class Transition:
    trigger: str
    target: str
    guard: Guard | None = None


@dataclass(frozen=True)
class StateNode:
    id: str
    behavior_type: BehaviorType | None = None
    behavior_name: str = ""
    inputs: tuple[tuple[str, str], ...] = ()
    outputs: tuple[tuple[str, str], ...] = ()
    children: tuple[StateNode, ...] = ()
    initial: str | None = None
    transitions: tuple[Transition, ...] = ()
    final: bool = False

    @property
    def composite(self) -> bool:
        return bool(self.children)


@dataclass(frozen=True)
class Region:
    """A top-level group of sibling states; regions run side by side."""

    initial: str
    states: tuple[StateNode, ...]


@dataclass(frozen=True)
class BehaviorModel:
    name: str
    regions: tuple[Region, ...]
    parallel: bool = False

    def walk(self) -> Iterator[tuple[StateNode, tuple[str, ...]]]:
        """Yield ``(state, ancestor ids)`` depth-first in document order."""

        def rec(nodes, trail):
            for node in nodes:
                yield node, trail
                yield from rec(node.children, trail + (node.id,))

        for region in self.regions:
            yield from rec(region.states, ())

    def states(self) -> list[StateNode]:
        return [s for s, _ in self.walk()]

    def find(self, state_id: str) -> StateNode:
        for s, _ in self.walk():
            if s.id == state_id:
                return s
        raise KeyError(state_id)

    def triggers(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.states():
            for t in s.transitions:
                seen.setdefault(t.trigger)
        return list(seen)


class ValidationError(Exception):
    """Raised with every violated model invariant, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def validate_model(model: BehaviorModel, registry: Any = None) -> None:
    problems: list[str] = []
    if not IDENT.match(model.name or ""):
        problems.append(f"invalid model name {model.name!r}")
    if not model.regions:
        problems.append("model has no regions")
    if len(model.regions) > 1 and not model.parallel:
        problems.append("multiple regions require a parallel model")
    seen: set[str] = set()

    def check_container(states: tuple[StateNode, ...], initial: str | None, where: str) -> None:
        if not states:
            problems.append(f"{where}: no states")
            return
        ids = {s.id for s in states}
        if initial is None:
            problems.append(f"{where}: missing initial state")
        elif initial not in ids:
            problems.append(f"{where}: initial state {initial!r} is not a child")
        else:
            init = next(s for s in states if s.id == initial)
            if init.final:
                problems.append(f"{where}: initial state {initial!r} is final")
        for s in states:
            check_state(s, ids)

    def check_state(s: StateNode, siblings: set[str]) -> None:
        if not IDENT.match(s.id or ""):
            problems.append(f"invalid state id {s.id!r}")
        if s.id in seen:
            problems.append(f"duplicate state id {s.id!r}")
        seen.add(s.id)
        if s.final:
            if s.children or s.transitions or s.behavior_type is not None:
                problems.append(f"final state {s.id!r} may not have children, transitions or a type")
            return
        if s.behavior_type is None:
            problems.append(f"state {s.id!r} has no behavior type")
        elif s.children and s.behavior_type is not BehaviorType.COMPLEX_BEHAVIOR:
            problems.append(f"state {s.id!r}: only ComplexBehavior states may have children")
        elif s.behavior_type is BehaviorType.COMPLEX_BEHAVIOR and not s.children:
            problems.append(f"state {s.id!r}: ComplexBehavior requires child states")
        if not s.children and s.initial is not None:
            problems.append(f"state {s.id!r}: initial child set on a simple state")
        for key, kind in s.inputs + s.outputs:
            if kind not in VALUE_KINDS:
                problems.append(f"state {s.id!r}: unknown value kind {kind!r} for {key!r}")
        for t in s.transitions:
            if not t.trigger:
                problems.append(f"state {s.id!r}: empty transition trigger")
            elif not valid_event_name(t.trigger):
                problems.append(f"state {s.id!r}: invalid trigger {t.trigger!r}")
            if t.target not in siblings:
                problems.append(f"state {s.id!r}: dangling transition target {t.target!r}")
        if s.behavior_name and registry is not None:
            try:
                desc = registry.lookup(s.behavior_name)
            except KeyError:
                problems.append(f"state {s.id!r}: unknown behavior {s.behavior_name!r}")
            else:
                if desc.behavior_type is not s.behavior_type:
                    problems.append(
                        f"state {s.id!r}: behavior {s.behavior_name!r} is a "
                        f"{desc.behavior_type.value}, not {s.behavior_type.value}"
                    )
        elif not s.behavior_name and not s.children and s.behavior_type is not None:
            problems.append(f"state {s.id!r}: simple state without behavior name")
        if s.children:
            check_container(s.children, s.initial, f"state {s.id!r}")

    for i, region in enumerate(model.regions):
        check_container(region.states, region.initial, f"region {i}")
    if model.name in seen:
        problems.append(f"model name {model.name!r} collides with a state id")
    if problems:
        raise ValidationError(problems)


# --------------------------------------------------------------------------
# Runtime


class Status(enum.Enum):
    RUNNING = "Running"
    TERMINATED = "Terminated"


class OutcomeKind(enum.Enum):
    FIRED = "Fired"
    PREEMPTED = "Preempted"
    IGNORED = "Ignored"


@dataclass(frozen=True)
class TransitionOutcome:
    kind: OutcomeKind
    from_path: str = ""
    to_path: str = ""
    terminated: tuple[str, ...] = ()

    @property
    def fired(self) -> bool:
        return self.kind is not OutcomeKind.IGNORED


IGNORED = TransitionOutcome(OutcomeKind.IGNORED)


class TransitionRecord(NamedTuple):
    timestamp: int
    machine: int
    event: str
    outcome: str
    from_path: str
    to_path: str


TRANSITION_CSV_HEADER = ("tick", "machine", "event", "outcome", "from", "to")


def write_transition_csv(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRANSITION_CSV_HEADER)
    w.writerows(records)


class BehaviorFault(Exception):
    """Raised by a tick function to signal failure."""


class MissingInput(BehaviorFault):
    pass


class _Node:
    __slots__ = ("state", "path", "parent", "children", "by_trigger", "descriptor", "tick", "observe")

    def __init__(self, state: StateNode, path: str, parent: _Node | None):
        self.state = state
        self.path = path
        self.parent = parent
        self.children: dict[str, _Node] = {}
        self.by_trigger: dict[str, list[Transition]] = {}
        for t in state.transitions:
            self.by_trigger.setdefault(t.trigger, []).append(t)
        self.descriptor = None
        self.tick = None
        self.observe = None


def _compile(model: BehaviorModel, registry) -> list[tuple[dict[str, _Node], str]]:
    def rec(states, prefix, parent):
        table = {}
        for s in states:
            node = _Node(s, f"{prefix}/{s.id}", parent)
            if s.behavior_name and registry is not None:
                node.descriptor = registry.lookup(s.behavior_name)
                node.tick = node.descriptor.tick
                node.observe = getattr(node.descriptor, "observe", None)
            if s.children:
                node.children = rec(s.children, node.path, node)
            table[s.id] = node
        return table

    return [(rec(r.states, model.name, None), r.initial) for r in model.regions]


class MachineInstance:
    """A running behavior model.

    ``active`` holds one root-to-leaf chain per region. ``params`` are
    per-instance constants (``self`` is the machine id) that guards can
    reference with ``$name``; ``blackboard`` carries data between behaviors.
    """

    def __init__(self, model: BehaviorModel, registry, machine_id: int = 0,
                 params: dict[str, Scalar] | None = None,
                 log_sink: list | None = None):
        self.model = model
        self.registry = registry
        self.machine_id = machine_id
        self.params: dict[str, Scalar] = {"self": machine_id}
        if params:
            self.params.update(params)
        self.blackboard: dict[str, Scalar] = {}
        self.status = Status.RUNNING
        self.queue: deque[Event] = deque()
        self.log = log_sink
        self.faults: list[tuple[str, str]] = []
        self.leaf_entries = 0
        self.initial_entries = 0
        self._regions = _compile(model, registry)
        self.active: list[list[_Node]] = []
        self._fresh: list[bool] = []
        for table, initial in self._regions:
            chain = self._enter(table[initial], [])
            self.active.append(chain)
            self._fresh.append(True)
        self.initial_entries = self.leaf_entries

    def _enter(self, node: _Node, prefix: list[_Node]) -> list[_Node]:
        chain = prefix + [node]
        while node.children:
            node = node.children[node.state.initial]
            chain.append(node)
        self.leaf_entries += 1
        return chain

    @property
    def running(self) -> bool:
        return self.status is Status.RUNNING

    def leaf(self, region: int = 0) -> StateNode | None:
        if not self.active:
            return None
        return self.active[region][-1].state

    def enqueue(self, event: Event) -> None:
        self.queue.append(event)


def build_machine(model: BehaviorModel, registry, machine_id: int = 0,
                  params: dict[str, Scalar] | None = None,
                  log_sink: list | None = None) -> MachineInstance:
    validate_model(model, registry)
    return MachineInstance(model, registry, machine_id, params, log_sink)


def dispatch_event(instance: MachineInstance, event: Event) -> TransitionOutcome:
    outcome = _dispatch(instance, event)
    if instance.log is not None:
        instance.log.append(TransitionRecord(
            event.timestamp, instance.machine_id, event.name,
            outcome.kind.value, outcome.from_path, outcome.to_path,
        ))
    return outcome


def _dispatch(instance: MachineInstance, event: Event) -> TransitionOutcome:
    if instance.status is not Status.RUNNING:
        return IGNORED
    name = event.name
    for r, chain in enumerate(instance.active):
        for depth, node in enumerate(chain):
            candidates = node.by_trigger.get(name)
            if not candidates:
                continue
            for tr in candidates:
                if tr.guard is None or tr.guard.holds(event, instance):
                    return _fire(instance, r, depth, tr, event)
    return IGNORED


def _fire(instance: MachineInstance, r: int, depth: int, tr: Transition, event: Event) -> TransitionOutcome:
    chain = instance.active[r]
    source = chain[depth]
    from_path = chain[-1].path
    terminated = tuple(n.path for n in chain[depth + 1:])
    siblings = source.parent.children if source.parent else instance._regions[r][0]
    target = siblings[tr.target]
    for k, v in event.payload:
        instance.blackboard[k] = v
    kind = OutcomeKind.PREEMPTED if terminated else OutcomeKind.FIRED
    if target.state.final:
        instance.leaf_entries += 1
        instance.status = Status.TERMINATED
        instance.active = []
        instance._fresh = []
        instance.queue.clear()
        return TransitionOutcome(kind, from_path, target.path, terminated)
    new_chain = instance._enter(target, chain[:depth])
    instance.active[r] = new_chain
    instance._fresh[r] = True
    return TransitionOutcome(kind, from_path, new_chain[-1].path, terminated)


def drain(instance: MachineInstance, context: Any = None) -> list[Event]:
    """Dispatch every queued event in FIFO order (run-to-completion).

    Active leaves whose behavior defines an ``observe`` hook see each event
    after it has been dispatched. Returns the events consumed.
    """
    consumed = []
    q = instance.queue
    while q:
        ev = q.popleft()
        consumed.append(ev)
        dispatch_event(instance, ev)
        if context is not None and instance.status is Status.RUNNING:
            for chain in instance.active:
                obs = chain[-1].observe
                if obs is not None:
                    obs(context, ev)
    return consumed


@dataclass
class StepContext:
    """World-access handle passed to tick functions.

    The simulator owns one per agent and refreshes ``tick`` and ``inbox``
    every tick; :func:`step` fills in the per-leaf fields.
    """

    agent: Any = None
    world: Any = None
    rng: Any = None
    tick: int = 0
    sender: int = 0
    inbox: list = field(default_factory=list)
    blackboard: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    state: str = ""
    fresh: bool = False
    commands: list = field(default_factory=list)

    def event(self, name: str, **payload: Scalar) -> Event:
        return Event(name, self.tick, self.sender, tuple(payload.items()))

    def done(self) -> Event:
        return Event(DONE, self.tick, self.sender)


def step(instance: MachineInstance, context: StepContext) -> list[Event]:
    """Run one tick of every active leaf behavior.

    Emitted events are returned, never self-dispatched. Motion commands are
    appended to ``context.commands``.
    """
    if instance.status is not Status.RUNNING:
        return []
    context.blackboard = instance.blackboard
    context.params = instance.params
    emitted: list[Event] = []
    fresh = instance._fresh
    for r, chain in enumerate(instance.active):
        leaf = chain[-1]
        tick = leaf.tick
        context.fresh = fresh[r]
        fresh[r] = False
        if tick is None:
            continue
        context.state = leaf.state.id
        try:
            out = tick(context)
        except BehaviorFault as exc:
            log.warning("behavior %s on machine %d faulted: %s", leaf.state.id, instance.machine_id, exc)
            instance.faults.append((leaf.path, str(exc)))
            continue
        if out is None:
            continue
        cmd, events = out
        if cmd is not None:
            context.commands.append(cmd)
        if events:
            emitted.extend(events)
    return emitted


def active_configuration(instance: MachineInstance) -> list[str]:
    if instance.status is not Status.RUNNING:
        return []
    return [chain[-1].path for chain in instance.active]


def check_configuration(instance: MachineInstance) -> None:
    """Assert the instance invariants; used by tests after every operation."""
    if instance.status is Status.TERMINATED:
        assert instance.active == []
        return
    assert len(instance.active) == len(instance.model.regions)
    for (table, _), chain in zip(instance._regions, instance.active):
        assert chain, "empty active chain"
        assert chain[0] is table.get(chain[0].state.id)
        for parent, child in zip(chain, chain[1:]):
            assert child.parent is parent
        assert not chain[-1].children, "active chain does not end at a leaf"
