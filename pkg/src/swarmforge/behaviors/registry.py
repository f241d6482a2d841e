"""Behavior registry and its on-disk manifest."""
from __future__ import annotations

import configparser
import enum
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..fsm import VALUE_KINDS, BehaviorType


class LibraryLayer(enum.Enum):
    SWARM_COMPLEX_BEHAVIORS = "SwarmLibrary.ComplexBehaviors"
    SWARM_BEHAVIORS = "SwarmLibrary.SwarmBehaviors"
    SWARM_FUNCTIONS = "SwarmLibrary.SwarmFunctions"
    COMMUNICATION = "CommunicationLibrary"
    ABSTRACTION_HARDWARE_FUNCTIONS = "AbstractionLibrary.HardwareFunctions"


LAYER_FOR_TYPE = {
    BehaviorType.COMPLEX_BEHAVIOR: LibraryLayer.SWARM_COMPLEX_BEHAVIORS,
    BehaviorType.SWARM_BEHAVIOR: LibraryLayer.SWARM_BEHAVIORS,
    BehaviorType.SWARM_FUNCTION: LibraryLayer.SWARM_FUNCTIONS,
    BehaviorType.HARDWARE_FUNCTION: LibraryLayer.ABSTRACTION_HARDWARE_FUNCTIONS,
}


class DuplicateName(KeyError):
    pass


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class BehaviorDescriptor:
    name: str
    behavior_type: BehaviorType
    description: str = ""
    inputs: tuple[tuple[str, str], ...] = ()
    outputs: tuple[tuple[str, str], ...] = ()
    emits: tuple[str, ...] = ()
    tick: Optional[Callable] = field(default=None, compare=False, repr=False)
    observe: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def layer(self) -> LibraryLayer:
        return LAYER_FOR_TYPE[self.behavior_type]

    def metadata(self) -> tuple:
        return (self.name, self.behavior_type, self.layer, self.description,
                self.inputs, self.outputs, self.emits)


class Registry:
    def __init__(self, descriptors=()):
        self._by_name: dict[str, BehaviorDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: BehaviorDescriptor) -> Registry:
        if descriptor.name in self._by_name:
            raise DuplicateName(descriptor.name)
        for key, kind in descriptor.inputs + descriptor.outputs:
            if kind not in VALUE_KINDS:
                raise ValueError(f"{descriptor.name}: unknown kind {kind!r} for {key!r}")
        self._by_name[descriptor.name] = descriptor
        return self

    def lookup(self, name: str) -> BehaviorDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise NotFound(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self) -> int:
        return len(self._by_name)

    def by_layer(self, layer: LibraryLayer) -> list[BehaviorDescriptor]:
        return [d for d in self if d.layer is layer]

    def manifest(self) -> str:
        """Render the registry as an INI-style key-value manifest.

        Sections are sorted by name so the text is stable.
        """
        cp = configparser.ConfigParser(interpolation=None)
        for d in sorted(self, key=lambda d: d.name):
            cp[d.name] = {
                "type": d.behavior_type.value,
                "layer": d.layer.value,
                "description": d.description,
                "inputs": _fmt_decls(d.inputs),
                "outputs": _fmt_decls(d.outputs),
                "emits": ", ".join(d.emits),
            }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().rstrip("\n") + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> Registry:
        """Metadata-only registry (no tick functions), for validation and codegen."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        reg = cls()
        for name in cp.sections():
            sec = cp[name]
            btype = BehaviorType(sec["type"])
            layer = sec.get("layer")
            if layer is not None and LibraryLayer(layer) is not LAYER_FOR_TYPE[btype]:
                raise ValueError(f"{name}: layer {layer} does not match type {btype.value}")
            reg.register(BehaviorDescriptor(
                name, btype, sec.get("description", ""),
                _parse_decls(sec.get("inputs", "")),
                _parse_decls(sec.get("outputs", "")),
                tuple(e.strip() for e in sec.get("emits", "").split(",") if e.strip()),
            ))
        return reg


def _fmt_decls(decls) -> str:
    return ", ".join(f"{k}:{kind}" for k, kind in decls)


def _parse_decls(text: str) -> tuple[tuple[str, str], ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, _, kind = item.partition(":")
        out.append((key.strip(), kind.strip()))
    return tuple(out)
