"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (model, config, template, frame),
2 runtime failure (I/O, simulation error, tick cap).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .behaviors import default_registry
from .bus import FrameError, decode_event, encode_event
from .codegen import TemplateError, TemplateSet, builtin_template_set, generate_bundle
from .fsm import Event, Position, ValidationError
from .metrics import (
    aggregate,
    load_sweep_spec,
    runs_csv,
    stats_from_runs_csv,
    sweep_csv,
    sweep_runs,
)
from .model_io import ConfigError, ParseError, SchemaError, load_model, parse_swarm_config
from .sim.config import WorldConfig, load_world_config
from .sim.runs import TickCapExceeded, run_coverage, run_sar, write_logs, write_results_csv
from .sim.world import SimulationError

OK, INVALID, FAILED = 0, 1, 2
_INVALID = (ParseError, SchemaError, ValidationError, ConfigError, TemplateError, FrameError)


def _cmd_validate(args) -> int:
    registry = default_registry()
    model = load_model(args.model, registry)
    print(f"{args.model}: ok ({model.name}, {len(model.states())} states, {len(model.regions)} regions)")
    if args.swarm:
        comp = parse_swarm_config(Path(args.swarm).read_text(encoding="utf-8"),
                                  Path(args.swarm).parent, registry)
        for e in comp.entries:
            print(f"{args.swarm}: {e.cps_type} x{e.count} -> {e.model_file}")
    return OK


def _template_set(spec: str) -> TemplateSet:
    p = Path(spec)
    if p.is_dir():
        return TemplateSet.load(p)
    try:
        return builtin_template_set(spec)
    except FileNotFoundError:
        raise TemplateError(f"no template directory or built-in set named {spec!r}") from None


def _cmd_generate(args) -> int:
    registry = default_registry()
    model = load_model(args.model, registry)
    entries = generate_bundle(model, _template_set(args.templates), args.out, registry)
    for e in entries:
        print(f"{e.filename},{e.bytes},{e.sha256}")
    return OK


def _cmd_simulate(args) -> int:
    config = load_world_config(args.config) if args.config else WorldConfig()
    overrides = {"seed": args.seed}
    if args.scenario == "coverage":
        overrides.update(target_count=0)
    config = config.with_(**overrides)
    config.validate()
    run = run_coverage if args.scenario == "coverage" else run_sar
    code = OK
    try:
        result = run(config, record=bool(args.log_dir), strict=True)
    except TickCapExceeded as exc:
        result = exc.result
        print(f"error: {exc}", file=sys.stderr)
        code = FAILED
    write_results_csv(result, sys.stdout)
    if args.log_dir:
        for p in write_logs(result, args.log_dir):
            logging.getLogger(__name__).info("wrote %s", p)
    return code


def _cmd_sweep(args) -> int:
    spec = load_sweep_spec(args.spec)
    runs = sweep_runs(spec, workers=args.workers)
    Path(args.out).write_text(sweep_csv(aggregate(spec, runs)), encoding="utf-8")
    if args.runs:
        Path(args.runs).write_text(runs_csv(spec, runs), encoding="utf-8")
    return OK


def _cmd_stats(args) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    keys, groups = stats_from_runs_csv(text, args.level)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow((*keys, "n", "mean", "halfwidth"))
    for group, n, mean, hw in groups:
        w.writerow((*group, n, "" if mean is None else repr(mean), "" if hw is None else repr(hw)))
    return OK


def _payload_item(kind: str, text: str):
    key, sep, raw = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    if kind == "int":
        return key, int(raw)
    if kind == "real":
        return key, float(raw)
    if kind == "position":
        x, _, y = raw.partition(",")
        return key, Position(float(x), float(y))
    return key, raw


def _cmd_encode(args) -> int:
    payload = []
    for kind in ("int", "real", "string", "position"):
        for item in getattr(args, kind) or ():
            payload.append(_payload_item(kind, item))
    try:
        event = Event(args.name, args.timestamp, args.sender, tuple(payload))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(encode_event(event).hex(" ").upper())
    return OK


def _cmd_decode(args) -> int:
    text = args.hex if args.hex != "-" else sys.stdin.read()
    try:
        data = bytes.fromhex("".join(text.split()))
    except ValueError as exc:
        raise FrameError(f"not hex: {exc}") from None
    ev = decode_event(data)
    payload = {k: (list(v) if isinstance(v, Position) else v) for k, v in ev.payload}
    print(json.dumps({"name": ev.name, "sender": ev.sender, "timestamp": ev.timestamp,
                      "payload": payload}, sort_keys=True))
    return OK


def _cmd_library(args) -> int:
    sys.stdout.write(default_registry().manifest())
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="parse and validate a behavior model")
    s.add_argument("model")
    s.add_argument("--swarm", help="swarm composition file to check as well")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("generate", help="render a model through a template set")
    s.add_argument("model")
    s.add_argument("--templates", required=True, help="template directory or built-in set name")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_generate)

    s = sub.add_parser("simulate", help="run one abstract simulation")
    s.add_argument("scenario", choices=("coverage", "sar"))
    s.add_argument("--config", help="world config file (defaults if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-dir")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("sweep", help="run a seed sweep and write summary statistics")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--runs", help="also write per-run values to this CSV")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("stats", help="summarise a per-run CSV with confidence intervals")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--level", type=float, default=0.95)
    s.set_defaults(func=_cmd_stats)

    s = sub.add_parser("encode-event", help="print the wire frame of an event as hex")
    s.add_argument("name")
    s.add_argument("--sender", type=int, default=0)
    s.add_argument("--timestamp", type=int, default=0)
    s.add_argument("--int", action="append", metavar="KEY=N")
    s.add_argument("--real", action="append", metavar="KEY=X")
    s.add_argument("--string", action="append", metavar="KEY=TEXT")
    s.add_argument("--position", action="append", metavar="KEY=X,Y")
    s.set_defaults(func=_cmd_encode)

    s = sub.add_parser("decode-event", help="decode a hex wire frame ('-' reads stdin)")
    s.add_argument("hex")
    s.set_defaults(func=_cmd_decode)

    s = sub.add_parser("library", help="print the behavior library manifest")
    s.set_defaults(func=_cmd_library)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (OSError, SimulationError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
