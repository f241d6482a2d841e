"""Template-based code generation from behavior models.

Directive language (text outside ``{{ }}`` is copied verbatim)::

    {{path}}  {{path|xml}}                substitution, optional XML escape
    {{#each path}} ... {{/each}}          iteration; @index @first @last
    {{#if cond}} ... {{else}} ... {{/if}} cond: path | path == "x" | path != "x"
    {{#block name}} ... {{/block}}        named partial (produces no output)
    {{> name}}                            render a partial in the current scope
    {{! comment}}

A block tag alone on its line consumes the whole line. A first line
``##output <pattern>`` names the output file; the pattern may use
substitutions. Templates without it write ``<template name>`` minus the
``.tmpl`` suffix.
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union
from xml.sax.saxutils import escape

from .fsm import DONE, BehaviorModel, StateNode

MAX_PARTIAL_DEPTH = 64
MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ("filename", "bytes", "sha256")


class TemplateError(ValueError):
    def __init__(self, message: str, line: int = 0, template: str = ""):
        self.message = message
        self.line = line
        self.template = template
        where = f"{template}:{line}" if template else f"line {line}"
        super().__init__(f"{where}: {message}")


# --------------------------------------------------------------------------
# parsing

_TAG = re.compile(r"\{\{(.*?)\}\}", re.S)
_PATH = r"@?[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*"
_VAR = re.compile(rf"\s*({_PATH})\s*(?:\|\s*(xml))?\s*\Z")
_COND = re.compile(rf"\s*({_PATH})\s*(?:(==|!=)\s*\"([^\"]*)\")?\s*\Z")
_NAME = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_-]*)\s*\Z")


@dataclass
class _Text:
    text: str


@dataclass
class _Var:
    path: str
    escape: bool
    line: int


@dataclass
class _Each:
    path: str
    body: list
    line: int


@dataclass
class _If:
    path: str
    op: Optional[str]
    literal: Optional[str]
    then: list
    orelse: list
    line: int


@dataclass
class _Partial:
    name: str
    line: int


def _standalone(src: str, start: int, end: int) -> tuple[int, int] | None:
    """Span of the whole line if the tag at [start, end) is alone on it."""
    ls = src.rfind("\n", 0, start) + 1
    if src[ls:start].strip(" \t"):
        return None
    le = src.find("\n", end)
    tail_end = len(src) if le < 0 else le
    if src[end:tail_end].strip(" \t\r"):
        return None
    return ls, (tail_end if le < 0 else le + 1)


def _tokens(src: str):
    """Yield ("text", str, line) and ("tag", body, line) tokens."""
    pos = 0
    for m in _TAG.finditer(src):
        body = m.group(1)
        kind = body[:1]
        start, end = m.span()
        if kind in "#/!>" or body.strip() == "else":
            span = _standalone(src, start, end)
            if span is not None:
                start, end = span
                start = max(start, pos)
        if start > pos:
            yield "text", src[pos:start], src.count("\n", 0, pos) + 1
        yield "tag", body, src.count("\n", 0, m.start()) + 1
        pos = end
    if "{{" in src[pos:] or "}}" in src[pos:]:
        raise TemplateError("unterminated directive", src.count("\n", 0, pos) + 1)
    if pos < len(src):
        yield "text", src[pos:], src.count("\n", 0, pos) + 1


@dataclass
class Template:
    name: str
    source: str
    output: str = ""
    body: list = field(default_factory=list, repr=False)
    blocks: dict = field(default_factory=dict, repr=False)
    output_body: list = field(default_factory=list, repr=False)

    @classmethod
    def parse(cls, name: str, source: str) -> Template:
        offset = 0
        output = name[:-5] if name.endswith(".tmpl") else name
        if source.startswith("##output "):
            first, _, rest = source.partition("\n")
            output = first[len("##output "):].strip()
            source_body = rest
            offset = 1
        else:
            source_body = source
        t = cls(name, source, output)
        try:
            t.body = t._parse(source_body, offset)
            t.output_body = t._parse(output, 0)
            t._check_partials(t.body)
            for b in t.blocks.values():
                t._check_partials(b)
        except TemplateError as exc:
            raise TemplateError(exc.message, exc.line, name) from None
        return t

    def _parse(self, src: str, offset: int) -> list:
        root: list = []
        stack: list[tuple[str, Any, list]] = []  # (kind, node, current list)
        cur = root
        for kind, value, line in _tokens(src):
            line += offset
            if kind == "text":
                cur.append(_Text(value))
                continue
            body = value.strip()
            if body.startswith("!"):
                continue
            if body.startswith("#each "):
                m = _VAR.match(body[6:])
                if not m or m.group(2):
                    raise TemplateError(f"bad each expression {body!r}", line)
                node = _Each(m.group(1), [], line)
                cur.append(node)
                stack.append(("each", node, cur))
                cur = node.body
            elif body.startswith("#if "):
                m = _COND.match(body[4:])
                if not m:
                    raise TemplateError(f"bad condition {body!r}", line)
                node = _If(m.group(1), m.group(2), m.group(3), [], [], line)
                cur.append(node)
                stack.append(("if", node, cur))
                cur = node.then
            elif body == "else":
                if not stack or stack[-1][0] != "if" or cur is stack[-1][1].orelse:
                    raise TemplateError("else outside if", line)
                cur = stack[-1][1].orelse
            elif body.startswith("#block "):
                m = _NAME.match(body[7:])
                if not m:
                    raise TemplateError(f"bad block name {body!r}", line)
                if m.group(1) in self.blocks:
                    raise TemplateError(f"block {m.group(1)!r} defined twice", line)
                node = []
                self.blocks[m.group(1)] = node
                stack.append(("block", (m.group(1), line), cur))
                cur = node
            elif body.startswith("/"):
                closing = body[1:].strip()
                if not stack:
                    raise TemplateError(f"unmatched {{{{/{closing}}}}}", line)
                opened, _, parent = stack.pop()
                if opened != closing:
                    raise TemplateError(f"{{{{/{closing}}}}} closes {opened}", line)
                cur = parent
            elif body.startswith(">"):
                m = _NAME.match(body[1:])
                if not m:
                    raise TemplateError(f"bad partial reference {body!r}", line)
                cur.append(_Partial(m.group(1), line))
            elif body.startswith("#"):
                raise TemplateError(f"unknown directive {body!r}", line)
            else:
                m = _VAR.match(body)
                if not m:
                    raise TemplateError(f"bad expression {body!r}", line)
                cur.append(_Var(m.group(1), bool(m.group(2)), line))
        if stack:
            kind, node, _ = stack[-1]
            line = node[1] if kind == "block" else node.line
            raise TemplateError(f"unclosed {kind}", line)
        return root

    def _check_partials(self, nodes) -> None:
        for n in nodes:
            if isinstance(n, _Partial) and n.name not in self.blocks:
                raise TemplateError(f"unknown partial {n.name!r}", n.line)
            if isinstance(n, _Each):
                self._check_partials(n.body)
            elif isinstance(n, _If):
                self._check_partials(n.then)
                self._check_partials(n.orelse)

    # ------------------------------------------------------------- rendering

    def render_context(self, context: dict) -> str:
        out: list[str] = []
        try:
            self._render(self.body, [context], out, 0)
        except TemplateError as exc:
            raise TemplateError(exc.message, exc.line, self.name) from None
        return "".join(out)

    def output_name(self, context: dict) -> str:
        out: list[str] = []
        self._render(self.output_body, [context], out, 0)
        return "".join(out)

    def _render(self, nodes, scopes, out, depth) -> None:
        for n in nodes:
            if isinstance(n, _Text):
                out.append(n.text)
            elif isinstance(n, _Var):
                v = _lookup(scopes, n.path, n.line)
                if isinstance(v, (list, dict)):
                    raise TemplateError(f"{n.path} is not a scalar", n.line)
                s = _to_text(v)
                out.append(escape(s, {'"': "&quot;"}) if n.escape else s)
            elif isinstance(n, _Each):
                items = _lookup(scopes, n.path, n.line)
                if not isinstance(items, list):
                    raise TemplateError(f"{n.path} is not a list", n.line)
                last = len(items) - 1
                for i, item in enumerate(items):
                    frame = {"@index": i, "@first": i == 0, "@last": i == last, "this": item}
                    if isinstance(item, dict):
                        frame.update(item)
                    self._render(n.body, scopes + [frame], out, depth)
            elif isinstance(n, _If):
                v = _lookup(scopes, n.path, n.line)
                if n.op is None:
                    ok = bool(v)
                else:
                    ok = (_to_text(v) == n.literal) == (n.op == "==")
                self._render(n.then if ok else n.orelse, scopes, out, depth)
            elif isinstance(n, _Partial):
                if depth >= MAX_PARTIAL_DEPTH:
                    raise TemplateError(f"partial {n.name!r} nested too deeply", n.line)
                self._render(self.blocks[n.name], scopes, out, depth + 1)


def _to_text(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _lookup(scopes, path: str, line: int) -> Any:
    head, *rest = path.split(".")
    for scope in reversed(scopes):
        if head in scope:
            v = scope[head]
            break
    else:
        raise TemplateError(f"unknown variable {path!r}", line)
    for part in rest:
        if not isinstance(v, dict) or part not in v:
            raise TemplateError(f"unknown variable {path!r}", line)
        v = v[part]
    return v


# --------------------------------------------------------------------------
# model context


def _state_context(s: StateNode, prefix: str, depth: int, base: int) -> dict:
    path = f"{prefix}/{s.id}"
    children = [_state_context(c, path, depth + 1, base) for c in s.children]
    transitions = [
        {"event": t.trigger, "target": t.target, "cond": str(t.guard) if t.guard else ""}
        for t in s.transitions
    ]
    inputs = [{"key": k, "kind": kind} for k, kind in s.inputs]
    outputs = [{"key": k, "kind": kind} for k, kind in s.outputs]
    return {
        "id": s.id,
        "type": s.behavior_type.value if s.behavior_type else "",
        "behavior": s.behavior_name or "",
        "initial": s.initial or "",
        "final": s.final,
        "composite": bool(s.children),
        "inputs": inputs,
        "outputs": outputs,
        "transitions": transitions,
        "children": children,
        "has_body": bool(inputs or outputs or children or transitions),
        "path": path,
        "depth": depth,
        "pad": "  " * (base + depth),
        "inner": "  " * (base + depth + 1),
        "outline": "  " * (depth + 2),
        "outline_inner": "  " * (depth + 3),
    }


def model_context(model: BehaviorModel, registry=None) -> dict:
    """The data a template sees. States appear in document order."""
    if registry is None:
        from .behaviors import default_registry
        registry = default_registry()
    base = 3 if model.parallel else 1
    regions = []
    flat: list[dict] = []

    def collect(ctx):
        flat.append(ctx)
        for c in ctx["children"]:
            collect(c)

    for r in model.regions:
        states = [_state_context(s, model.name, 0, base) for s in r.states]
        for s in states:
            collect(s)
        regions.append({"initial": r.initial, "states": states})

    names: list[str] = []
    emitters: dict[str, list[str]] = {}
    for s, _ in model.walk():
        for t in s.transitions:
            if t.trigger != DONE and t.trigger not in names:
                names.append(t.trigger)
        if s.behavior_name and s.behavior_name in registry:
            for e in registry.lookup(s.behavior_name).emits:
                if e == DONE:
                    continue
                if e not in names:
                    names.append(e)
                if s.behavior_name not in emitters.setdefault(e, []):
                    emitters[e].append(s.behavior_name)
    events = [{"name": e, "emitters": ", ".join(emitters.get(e, []))} for e in names]
    return {
        "name": model.name,
        "parallel": model.parallel,
        "initial": model.regions[0].initial,
        "regions": regions,
        "states": flat,
        "events": events,
    }


def render(template: Union[Template, str], model: BehaviorModel, registry=None) -> str:
    if isinstance(template, str):
        template = Template.parse("<string>", template)
    return template.render_context(model_context(model, registry))


# --------------------------------------------------------------------------
# template sets and bundles


@dataclass(frozen=True)
class TemplateSet:
    name: str
    templates: tuple[Template, ...]

    def __post_init__(self) -> None:
        seen = set()
        for t in self.templates:
            if t.output in seen:
                raise TemplateError(f"duplicate output pattern {t.output!r}", 1, t.name)
            seen.add(t.output)

    @classmethod
    def load(cls, directory) -> TemplateSet:
        d = Path(directory)
        files = sorted(p for p in d.iterdir() if p.suffix == ".tmpl")
        if not files:
            raise TemplateError(f"no .tmpl files in {d}")
        return cls(d.name, tuple(Template.parse(p.name, p.read_text(encoding="utf-8")) for p in files))


def builtin_template_set(name: str) -> TemplateSet:
    from importlib import resources
    root = resources.files("swarmforge.data.templates").joinpath(name)
    files = sorted((p for p in root.iterdir() if p.name.endswith(".tmpl")), key=lambda p: p.name)
    return TemplateSet(name, tuple(Template.parse(p.name, p.read_text(encoding="utf-8")) for p in files))


@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    bytes: int
    sha256: str


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def render_bundle(model: BehaviorModel, template_set: TemplateSet, registry=None) -> dict[str, bytes]:
    ctx = model_context(model, registry)
    files: dict[str, bytes] = {}
    for t in template_set.templates:
        name = t.output_name(ctx)
        if not name or "/" in name or "\\" in name or name in (".", "..", MANIFEST_NAME):
            raise TemplateError(f"invalid output filename {name!r}", 1, t.name)
        if name in files:
            raise TemplateError(f"two templates write {name!r}", 1, t.name)
        files[name] = t.render_context(ctx).encode("utf-8")
    return files


def manifest_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for e in entries:
        w.writerow((e.filename, e.bytes, e.sha256))
    return buf.getvalue()


def generate_bundle(model: BehaviorModel, template_set: TemplateSet, out_dir,
                    registry=None) -> list[ManifestEntry]:
    """Render every template, then write the files and ``manifest.csv``.

    Rendering finishes before anything touches disk, so a template error
    leaves ``out_dir`` untouched. Files are staged in a sibling temporary
    directory and moved into place.
    """
    files = render_bundle(model, template_set, registry)
    entries = [ManifestEntry(n, len(b), _digest(b)) for n, b in sorted(files.items())]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".bundle-", dir=out))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        (stage / MANIFEST_NAME).write_text(manifest_csv(entries), encoding="utf-8")
        for name in [*files, MANIFEST_NAME]:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return entries


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise ValueError(f"{path}: not a bundle manifest")
    return [ManifestEntry(r[0], int(r[1]), r[2]) for r in rows[1:]]
