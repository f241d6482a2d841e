import csv
import io
import json
from pathlib import Path

import pytest

from swarmforge.cli import main

MODELS = Path(__file__).parents[1] / "src" / "swarmforge" / "data" / "models"
LAUNCH_HEX = "43 50 53 45 01 06 00 6C 61 75 6E 63 68 01 00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 00 00"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys):
    code, out, _ = run(capsys, "validate", MODELS / "sar_uav.scxml")
    assert code == 0 and "UavProcesses" in out


def test_validate_with_swarm(capsys, tmp_path):
    swarm = tmp_path / "swarm.cfg"
    swarm.write_text(f"uav: count=1 model={MODELS / 'sar_uav.scxml'}\n"
                     f"ugv: count=2 model={MODELS / 'rescue_ugv.scxml'}\n", encoding="utf-8")
    code, out, _ = run(capsys, "validate", MODELS / "sar_uav.scxml", "--swarm", swarm)
    assert code == 0 and "UGV x2" in out


def test_validate_invalid_model(capsys, tmp_path):
    bad = tmp_path / "bad.scxml"
    bad.write_text("<scxml", encoding="utf-8")
    code, _, err = run(capsys, "validate", bad)
    assert code == 1 and "line" in err


def test_validate_missing_file(capsys, tmp_path):
    assert run(capsys, "validate", tmp_path / "nope.scxml")[0] == 2


def test_generate(capsys, tmp_path):
    code, out, _ = run(capsys, "generate", MODELS / "sar_uav.scxml", "--templates", "pseudocode", "--out", tmp_path)
    assert code == 0 and out.startswith("UavProcesses.txt,")
    assert (tmp_path / "manifest.csv").exists()


def test_generate_bad_template_dir(capsys, tmp_path):
    (tmp_path / "t").mkdir()
    (tmp_path / "t" / "x.tmpl").write_text("{{#each states}}", encoding="utf-8")
    code, _, err = run(capsys, "generate", MODELS / "minimal.scxml", "--templates", tmp_path / "t",
                       "--out", tmp_path / "o")
    assert code == 1 and "unclosed" in err


def _config(tmp_path, text):
    p = tmp_path / "world.cfg"
    p.write_text(text, encoding="utf-8")
    return p


def test_simulate_coverage(capsys, tmp_path):
    cfg = _config(tmp_path, "width = 15\nheight = 15\n")
    code, out, _ = run(capsys, "simulate", "coverage", "--config", cfg, "--seed", 3, "--log-dir", tmp_path / "logs")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["seed", "kind", "key", "found", "assigned", "rescued"] and len(rows) == 7
    assert sorted(p.name for p in (tmp_path / "logs").iterdir()) == \
        ["bus.csv", "positions.csv", "results.csv", "transitions.csv"]


def test_simulate_sar(capsys, tmp_path):
    cfg = _config(tmp_path, "width = 15\nheight = 15\nugvCount = 1\ntargetCount = 3\n")
    code, out, _ = run(capsys, "simulate", "sar", "--config", cfg)
    assert code == 0 and out.count(",target,") == 3


def test_simulate_tick_cap_is_runtime_failure(capsys, tmp_path):
    cfg = _config(tmp_path, "width = 15\nheight = 15\ntickCap = 10\n")
    code, out, err = run(capsys, "simulate", "coverage", "--config", cfg)
    assert code == 2 and "tick cap" in err and "inf" in out


def test_simulate_bad_config(capsys, tmp_path):
    cfg = _config(tmp_path, "width = 15\nsprockets = 3\n")
    code, _, err = run(capsys, "simulate", "coverage", "--config", cfg)
    assert code == 1 and "line 2" in err


def test_sweep_and_stats(capsys, tmp_path):
    spec = tmp_path / "sweep.cfg"
    spec.write_text("width = 15\nheight = 15\nuavCounts = 1, 2\nrepetitions = 3\n", encoding="utf-8")
    code, _, _ = run(capsys, "sweep", "--spec", spec, "--out", tmp_path / "s.csv", "--runs", tmp_path / "r.csv")
    assert code == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 12
    code, out, _ = run(capsys, "stats", "--in", tmp_path / "r.csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 12 and all(r["n"] == "3" for r in rows)


def test_stats_rejects_non_run_csv(capsys, tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n", encoding="utf-8")
    assert run(capsys, "stats", "--in", p)[0] == 1


def test_encode_launch(capsys):
    code, out, _ = run(capsys, "encode-event", "launch", "--sender", 1)
    assert code == 0 and out.strip() == LAUNCH_HEX


def test_encode_decode_payload(capsys):
    code, out, _ = run(capsys, "encode-event", "targetFound", "--sender", 2, "--timestamp", 17,
                       "--int", "targetId=4", "--position", "position=3.5,7.5")
    assert code == 0
    code, out, _ = run(capsys, "decode-event", out.strip())
    assert code == 0
    assert json.loads(out) == {"name": "targetFound", "sender": 2, "timestamp": 17,
                               "payload": {"targetId": 4, "position": [3.5, 7.5]}}


def test_decode_bad_magic(capsys):
    code, _, err = run(capsys, "decode-event", "FF FF FF FF 01")
    assert code == 1 and "magic" in err


def test_encode_invalid_name(capsys):
    assert run(capsys, "encode-event", "9lives")[0] == 1


def test_library(capsys):
    code, out, _ = run(capsys, "library")
    assert code == 0 and "[Coverage]" in out


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
