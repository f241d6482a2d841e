"""Communication services: event broadcast, telemetry, remote parameters.

:class:`SwarmBus` is an in-process transport. Delivery is fire-and-forget;
the optional loss probability and tick delay exist to exercise robustness
and default to a perfect channel. :func:`encode_event` and
:func:`decode_event` define the binary framing used on socket transports
(all integers little-endian)::

    magic "CPSE" | version u8 | name u16+utf8 | sender u64 | timestamp u64 |
    count u16 | count x (key u16+utf8 | tag u8 | value)

with tags 1=int64, 2=float64, 3=string (u16+utf8), 4=position (2 x float64).
"""
from __future__ import annotations

import csv
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .fsm import Event, Position, Scalar

MAGIC = b"CPSE"
WIRE_VERSION = 1

TAG_INT = 1
TAG_FLOAT = 2
TAG_STRING = 3
TAG_POSITION = 4

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_POS = struct.Struct("<dd")


class FrameError(ValueError):
    pass


class BusClosed(RuntimeError):
    pass


class UnknownSender(KeyError):
    pass


class UnknownOwner(KeyError):
    pass


class UnknownKey(KeyError):
    pass


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string longer than 65535 bytes")
    return _U16.pack(len(raw)) + raw


def _pack_value(value: Scalar) -> bytes:
    if isinstance(value, bool):
        raise TypeError("booleans are not valid scalars")
    if isinstance(value, Position):
        return _U8.pack(TAG_POSITION) + _POS.pack(float(value.x), float(value.y))
    if isinstance(value, int):
        return _U8.pack(TAG_INT) + _I64.pack(value)
    if isinstance(value, float):
        return _U8.pack(TAG_FLOAT) + _F64.pack(value)
    if isinstance(value, str):
        return _U8.pack(TAG_STRING) + _pack_str(value)
    raise TypeError(f"cannot encode {type(value).__name__}")


def encode_event(event: Event) -> bytes:
    if len(event.payload) > 0xFFFF:
        raise ValueError("too many payload entries")
    parts = [MAGIC, _U8.pack(WIRE_VERSION), _pack_str(event.name),
             _U64.pack(event.sender), _U64.pack(event.timestamp),
             _U16.pack(len(event.payload))]
    for key, value in event.payload:
        parts.append(_pack_str(key))
        parts.append(_pack_value(value))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if end > len(self.data):
            raise FrameError(f"truncated frame: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def string(self) -> str:
        (n,) = self.unpack(_U16)
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError(f"invalid UTF-8: {exc}") from None


def decode_event(data: bytes) -> Event:
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise FrameError("bad magic")
    (version,) = r.unpack(_U8)
    if version != WIRE_VERSION:
        raise FrameError(f"unsupported version {version}")
    name = r.string()
    (sender,) = r.unpack(_U64)
    (timestamp,) = r.unpack(_U64)
    (count,) = r.unpack(_U16)
    payload = []
    for _ in range(count):
        key = r.string()
        (tag,) = r.unpack(_U8)
        if tag == TAG_INT:
            (value,) = r.unpack(_I64)
        elif tag == TAG_FLOAT:
            (value,) = r.unpack(_F64)
        elif tag == TAG_STRING:
            value = r.string()
        elif tag == TAG_POSITION:
            value = Position(*r.unpack(_POS))
        else:
            raise FrameError(f"unknown value tag {tag}")
        payload.append((key, value))
    if r.pos != len(r.data):
        raise FrameError(f"{len(r.data) - r.pos} trailing bytes after frame")
    try:
        return Event(name, timestamp, sender, tuple(payload))
    except ValueError as exc:
        raise FrameError(str(exc)) from None


# --------------------------------------------------------------------------
# in-process bus


class Receipt(NamedTuple):
    delivered: int
    dropped: int


class BusRecord(NamedTuple):
    timestamp: int
    sender: int
    event: str
    subscriber: int
    status: str


BUS_CSV_HEADER = ("timestamp", "sender", "event", "subscriber", "status")


def write_bus_csv(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BUS_CSV_HEADER)
    w.writerows(records)


@dataclass(frozen=True)
class TelemetrySample:
    sender: int
    timestamp: int
    position: Position
    active_state: str


class SwarmBus:
    """Broadcast bus with per-sender FIFO delivery.

    ``rng`` (anything with ``random()``) is required when ``loss > 0``.
    With ``delay > 0`` deliveries are held until :meth:`flush` is called
    with a tick at least ``timestamp + delay``.
    """

    def __init__(self, loss: float = 0.0, delay: int = 0, rng=None,
                 history: int = 64, record: bool = False):
        if not 0.0 <= loss <= 1.0:
            raise ValueError("loss must be in [0, 1]")
        if loss > 0.0 and rng is None:
            raise ValueError("a seeded rng is required for lossy delivery")
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.loss = loss
        self.delay = delay
        self.rng = rng
        self.history = history
        self.log: list[BusRecord] | None = [] if record else None
        self._subscribers: dict[int, Callable[[Event], None]] = {}
        self._order: list[int] = []
        self._pending: deque[tuple[int, int, Event]] = deque()
        self._telemetry: dict[int, deque[TelemetrySample]] = {}
        self._params: dict[int, dict[str, Scalar]] = {}
        self._lock = threading.RLock()
        self.closed = False

    # events -------------------------------------------------------------

    def subscribe(self, cps_id: int, deliver: Callable[[Event], None]) -> None:
        with self._lock:
            if cps_id in self._subscribers:
                raise ValueError(f"{cps_id} already subscribed")
            self._subscribers[cps_id] = deliver
            self._order = sorted(self._subscribers)

    def unsubscribe(self, cps_id: int) -> None:
        with self._lock:
            self._subscribers.pop(cps_id, None)
            self._order = sorted(self._subscribers)

    def close(self) -> None:
        with self._lock:
            self.closed = True

    def broadcast(self, event: Event) -> Receipt:
        with self._lock:
            if self.closed:
                raise BusClosed("bus is closed")
            delivered = dropped = 0
            log = self.log
            for sub in self._order:
                if sub == event.sender:
                    continue
                if self.loss > 0.0 and self.rng.random() < self.loss:
                    dropped += 1
                    if log is not None:
                        log.append(BusRecord(event.timestamp, event.sender, event.name, sub, "dropped"))
                    continue
                delivered += 1
                if log is not None:
                    log.append(BusRecord(event.timestamp, event.sender, event.name, sub, "delivered"))
                if self.delay:
                    self._pending.append((event.timestamp + self.delay, sub, event))
                else:
                    self._subscribers[sub](event)
            return Receipt(delivered, dropped)

    def flush(self, now: int) -> int:
        """Hand over delayed deliveries that are due at tick ``now``."""
        n = 0
        with self._lock:
            pending = self._pending
            while pending and pending[0][0] <= now:
                _, sub, event = pending.popleft()
                deliver = self._subscribers.get(sub)
                if deliver is not None:
                    deliver(event)
                    n += 1
        return n

    # telemetry ----------------------------------------------------------

    def publish_telemetry(self, sample: TelemetrySample) -> None:
        with self._lock:
            if self.closed:
                raise BusClosed("bus is closed")
            ring = self._telemetry.get(sample.sender)
            if ring is None:
                ring = self._telemetry[sample.sender] = deque(maxlen=self.history)
            elif ring and sample.timestamp < ring[-1].timestamp:
                raise ValueError("telemetry timestamps must be non-decreasing per sender")
            ring.append(sample)

    def latest_telemetry(self, sender: int) -> TelemetrySample:
        with self._lock:
            ring = self._telemetry.get(sender)
            if not ring:
                raise UnknownSender(sender)
            return ring[-1]

    def telemetry_history(self, sender: int) -> list[TelemetrySample]:
        with self._lock:
            if sender not in self._telemetry:
                raise UnknownSender(sender)
            return list(self._telemetry[sender])

    # parameters ---------------------------------------------------------

    def register_owner(self, owner: int, initial: dict[str, Scalar] | None = None) -> None:
        with self._lock:
            self._params.setdefault(owner, {}).update(initial or {})

    def set_parameter(self, owner: int, key: str, value: Scalar):
        """Store ``value``; returns the previous value or ``None``."""
        with self._lock:
            try:
                table = self._params[owner]
            except KeyError:
                raise UnknownOwner(owner) from None
            previous = table.get(key)
            table[key] = value
            return previous

    def get_parameter(self, owner: int, key: str) -> Scalar:
        with self._lock:
            try:
                table = self._params[owner]
            except KeyError:
                raise UnknownOwner(owner) from None
            try:
                return table[key]
            except KeyError:
                raise UnknownKey(key) from None
