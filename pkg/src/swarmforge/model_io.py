"""Read and write behavior models (SCXML subset) and swarm compositions.

The model format is plain SCXML (``scxml``, ``parallel``, ``state``,
``initial``, ``final``, ``transition``) plus a behavior namespace carrying
the behavior type and name of each state, its declared inputs/outputs, and
the grouping of sibling states into parallel regions. See
``docs/formats.md`` for the grammar.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape

from .fsm import (
    BehaviorModel,
    BehaviorType,
    Guard,
    Region,
    StateNode,
    Transition,
    ValidationError,
    validate_model,
)

SCXML_NS = "http://www.w3.org/2005/07/scxml"
SF_NS = "urn:swarmforge:behavior:1"
FORMAT_VERSION = "1"


def _q(ns: str, tag: str) -> str:
    return f"{{{ns}}}{tag}"


T_SCXML = _q(SCXML_NS, "scxml")
T_PARALLEL = _q(SCXML_NS, "parallel")
T_STATE = _q(SCXML_NS, "state")
T_FINAL = _q(SCXML_NS, "final")
T_INITIAL = _q(SCXML_NS, "initial")
T_TRANSITION = _q(SCXML_NS, "transition")
T_REGION = _q(SF_NS, "region")
T_INPUT = _q(SF_NS, "input")
T_OUTPUT = _q(SF_NS, "output")
A_TYPE = _q(SF_NS, "type")
A_BEHAVIOR = _q(SF_NS, "behavior")


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class SchemaError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ModelDocument:
    model: BehaviorModel
    path: str = ""
    version: str = FORMAT_VERSION


# --------------------------------------------------------------------------
# parsing


def _check_attrs(el: ET.Element, allowed: set[str], where: str) -> None:
    for key in el.attrib:
        if key not in allowed:
            raise SchemaError(f"{where}: unknown attribute {_pretty(key)!r}")


def _pretty(tag: str) -> str:
    return tag.replace(f"{{{SCXML_NS}}}", "").replace(f"{{{SF_NS}}}", "sf:")


def _require(el: ET.Element, key: str, where: str) -> str:
    value = el.get(key)
    if value is None or value == "":
        raise SchemaError(f"{where}: missing required attribute {_pretty(key)!r}")
    return value


def _initial_of(el: ET.Element, where: str) -> str | None:
    initial = el.get("initial")
    for child in el:
        if child.tag == T_INITIAL:
            trs = [c for c in child if c.tag == T_TRANSITION]
            if len(trs) != 1 or len(child) != 1:
                raise SchemaError(f"{where}: <initial> must hold exactly one transition")
            target = _require(trs[0], "target", f"{where}/initial")
            if initial is not None and initial != target:
                raise SchemaError(f"{where}: conflicting initial declarations")
            initial = target
    return initial


def _parse_decl(el: ET.Element, where: str) -> tuple[str, str]:
    _check_attrs(el, {"key", "kind"}, where)
    return _require(el, "key", where), _require(el, "kind", where)


def _parse_children(el: ET.Element, where: str) -> tuple[StateNode, ...]:
    out = []
    for child in el:
        if child.tag == T_STATE:
            out.append(_parse_state(child))
        elif child.tag == T_FINAL:
            _check_attrs(child, {"id"}, "final")
            if len(child):
                raise SchemaError("final states may not have children")
            out.append(StateNode(_require(child, "id", "final"), final=True))
    return tuple(out)


def _parse_state(el: ET.Element) -> StateNode:
    _check_attrs(el, {"id", "initial", A_TYPE, A_BEHAVIOR}, "state")
    sid = _require(el, "id", "state")
    where = f"state {sid!r}"
    type_text = _require(el, A_TYPE, where)
    try:
        btype = BehaviorType(type_text)
    except ValueError:
        raise ValidationError([f"{where}: unknown behavior type {type_text!r}"]) from None
    inputs, outputs, transitions = [], [], []
    for child in el:
        tag = child.tag
        if tag == T_INPUT:
            inputs.append(_parse_decl(child, f"{where} input"))
        elif tag == T_OUTPUT:
            outputs.append(_parse_decl(child, f"{where} output"))
        elif tag == T_TRANSITION:
            transitions.append(_parse_transition(child, where))
        elif tag in (T_STATE, T_FINAL, T_INITIAL):
            pass
        else:
            raise SchemaError(f"{where}: unknown element <{_pretty(tag)}>")
    return StateNode(
        id=sid,
        behavior_type=btype,
        behavior_name=el.get(A_BEHAVIOR, ""),
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        children=_parse_children(el, where),
        initial=_initial_of(el, where),
        transitions=tuple(transitions),
    )


def _parse_transition(el: ET.Element, where: str) -> Transition:
    _check_attrs(el, {"event", "target", "cond"}, f"{where} transition")
    if len(el):
        raise SchemaError(f"{where}: transitions may not contain executable content")
    event = _require(el, "event", f"{where} transition")
    target = _require(el, "target", f"{where} transition")
    cond = el.get("cond")
    guard = None
    if cond is not None:
        try:
            guard = Guard.parse(cond)
        except ValueError as exc:
            raise ValidationError([f"{where}: {exc}"]) from None
    return Transition(event, target, guard)


def _parse_region_body(el: ET.Element, where: str) -> Region:
    for child in el:
        if child.tag not in (T_STATE, T_FINAL, T_INITIAL):
            raise SchemaError(f"{where}: unknown element <{_pretty(child.tag)}>")
    states = _parse_children(el, where)
    if not states:
        raise SchemaError(f"{where}: no states")
    initial = _initial_of(el, where)
    if initial is None:
        initial = states[0].id
    return Region(initial, states)


def parse_model(text: Union[str, bytes], registry=None) -> BehaviorModel:
    """Parse and validate a model document."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}", line, col) from None
    if root.tag != T_SCXML:
        raise SchemaError(f"root element must be <scxml> in namespace {SCXML_NS}, got <{root.tag}>")
    _check_attrs(root, {"version", "name", "initial"}, "scxml")
    version = root.get("version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported or missing version {version!r}; expected {FORMAT_VERSION!r}")
    name = root.get("name", "Root")
    parallels = [c for c in root if c.tag == T_PARALLEL]
    if parallels:
        if len(parallels) != 1 or len(root) != 1:
            raise SchemaError("a <parallel> root must be the only child of <scxml>")
        par = parallels[0]
        _check_attrs(par, {"id"}, "parallel")
        pid = _require(par, "id", "parallel")
        if pid != name:
            raise SchemaError(f"parallel id {pid!r} must equal scxml name {name!r}")
        regions = []
        for i, child in enumerate(par):
            if child.tag != T_REGION:
                raise SchemaError(f"parallel children must be <sf:region>, got <{_pretty(child.tag)}>")
            _check_attrs(child, {"initial"}, "sf:region")
            regions.append(_parse_region_body(child, f"region {i}"))
        if not regions:
            raise SchemaError("parallel element has no regions")
        model = BehaviorModel(name, tuple(regions), parallel=True)
    else:
        if not len(root):
            raise SchemaError("document contains no states")
        model = BehaviorModel(name, (_parse_region_body(root, "scxml"),), parallel=False)
    validate_model(model, registry)
    return model


def load_model(path: Union[str, os.PathLike], registry=None) -> BehaviorModel:
    return parse_model(Path(path).read_bytes(), registry)


def load_document(path: Union[str, os.PathLike], registry=None) -> ModelDocument:
    return ModelDocument(load_model(path, registry), str(path), FORMAT_VERSION)


# --------------------------------------------------------------------------
# serialization


def _attr(value: str) -> str:
    return '"' + escape(value, {'"': "&quot;"}) + '"'


def _write_state(s: StateNode, depth: int, out: list[str]) -> None:
    pad = "  " * depth
    if s.final:
        out.append(f"{pad}<final id={_attr(s.id)}/>")
        return
    head = f"{pad}<state id={_attr(s.id)}"
    if s.initial is not None:
        head += f" initial={_attr(s.initial)}"
    head += f" sf:type={_attr(s.behavior_type.value)}"
    if s.behavior_name:
        head += f" sf:behavior={_attr(s.behavior_name)}"
    body: list[str] = []
    inner = "  " * (depth + 1)
    for key, kind in s.inputs:
        body.append(f"{inner}<sf:input key={_attr(key)} kind={_attr(kind)}/>")
    for key, kind in s.outputs:
        body.append(f"{inner}<sf:output key={_attr(key)} kind={_attr(kind)}/>")
    for child in s.children:
        _write_state(child, depth + 1, body)
    for t in s.transitions:
        line = f"{inner}<transition event={_attr(t.trigger)} target={_attr(t.target)}"
        if t.guard is not None:
            line += f" cond={_attr(str(t.guard))}"
        body.append(line + "/>")
    if body:
        out.append(head + ">")
        out.extend(body)
        out.append(f"{pad}</state>")
    else:
        out.append(head + "/>")


def serialize_model(model: BehaviorModel) -> str:
    """Canonical, byte-stable text for a model (2-space indent, LF)."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    head = (f'<scxml xmlns="{SCXML_NS}" xmlns:sf="{SF_NS}" '
            f'version="{FORMAT_VERSION}" name={_attr(model.name)}')
    if model.parallel:
        out.append(head + ">")
        out.append(f"  <parallel id={_attr(model.name)}>")
        for region in model.regions:
            out.append(f"    <sf:region initial={_attr(region.initial)}>")
            for s in region.states:
                _write_state(s, 3, out)
            out.append("    </sf:region>")
        out.append("  </parallel>")
    else:
        region = model.regions[0]
        out.append(head + f" initial={_attr(region.initial)}>")
        for s in region.states:
            _write_state(s, 1, out)
    out.append("</scxml>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# swarm composition

CPS_TYPES = ("UAV", "UGV")
_ENTRY_RE = re.compile(r"\s*([A-Za-z]+)\s*:\s*(.*)\Z")


@dataclass(frozen=True)
class CompositionEntry:
    cps_type: str
    count: int
    model_file: str
    parameters: tuple[tuple[str, Union[int, float, str]], ...] = ()


@dataclass(frozen=True)
class SwarmComposition:
    entries: tuple[CompositionEntry, ...]
    version: int = 1
    models: dict = field(default_factory=dict, compare=False, repr=False)

    def count(self, cps_type: str) -> int:
        return sum(e.count for e in self.entries if e.cps_type == cps_type.upper())


def _scalar(text: str) -> Union[int, float, str]:
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_swarm_config(text: str, base_dir: Union[str, os.PathLike, None] = None,
                       registry=None) -> SwarmComposition:
    """Parse ``type: key=value ...`` entries separated by newlines or ``;``.

    ``count`` and ``model`` are required per entry; other keys become
    parameter overrides. An optional ``version: 1`` entry pins the format.
    Model paths are resolved against ``base_dir`` and must parse.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    entries: list[CompositionEntry] = []
    models = {}
    version = 1
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0]
        for chunk in line.split(";"):
            if not chunk.strip():
                continue
            m = _ENTRY_RE.match(chunk)
            if not m:
                raise ConfigError(f"expected '<type>: key=value ...', got {chunk.strip()!r}", lineno)
            kind, rest = m.group(1), m.group(2).strip()
            if kind.lower() == "version":
                rest = rest.removeprefix("version=") if rest.startswith("version=") else rest
                if rest != "1":
                    raise ConfigError(f"unsupported version {rest!r}", lineno)
                continue
            cps_type = kind.upper()
            if cps_type not in CPS_TYPES:
                raise ConfigError(f"unknown CPS type {kind!r}", lineno)
            if any(e.cps_type == cps_type for e in entries):
                raise ConfigError(f"duplicate entry for {cps_type}", lineno)
            fields: dict[str, str] = {}
            for tok in rest.split():
                key, sep, value = tok.partition("=")
                if not sep or not key or not value:
                    raise ConfigError(f"malformed field {tok!r}", lineno)
                if key in fields:
                    raise ConfigError(f"duplicate field {key!r}", lineno)
                fields[key] = value
            if "count" not in fields:
                raise ConfigError(f"{cps_type}: missing count", lineno)
            if "model" not in fields:
                raise ConfigError(f"{cps_type}: missing model", lineno)
            try:
                count = int(fields.pop("count"))
            except ValueError:
                raise ConfigError(f"{cps_type}: count must be an integer", lineno) from None
            if count < 1:
                raise ConfigError(f"{cps_type}: count must be >= 1, got {count}", lineno)
            model_file = fields.pop("model")
            path = base / model_file
            if not path.is_file():
                raise ConfigError(f"{cps_type}: model file not found: {path}", lineno)
            try:
                models[cps_type] = load_model(path, registry)
            except (ParseError, SchemaError, ValidationError) as exc:
                raise ConfigError(f"{cps_type}: model {path} does not parse: {exc}", lineno) from None
            params = tuple((k, _scalar(v)) for k, v in fields.items())
            entries.append(CompositionEntry(cps_type, count, model_file, params))
    if not entries:
        raise ConfigError("composition has no entries")
    return SwarmComposition(tuple(entries), version, models)
