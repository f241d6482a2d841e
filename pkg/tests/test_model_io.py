from itertools import count
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from conftest import doc
from swarmforge.fsm import BehaviorModel, BehaviorType, Guard, Region, StateNode, Transition, ValidationError
from swarmforge.model_io import (
    ConfigError,
    ParseError,
    SchemaError,
    load_document,
    parse_model,
    parse_swarm_config,
    serialize_model,
)
from swarmforge.sim.world import builtin_model

GOLDEN = Path(__file__).parent / "golden"
MODELS = Path(__file__).parents[1] / "src" / "swarmforge" / "data" / "models"
FIXTURES = sorted(MODELS.glob("*.scxml"))


def test_sar_fixture_structure(uav_model):
    assert uav_model.parallel
    top = [s.id for s in uav_model.regions[0].states]
    assert top == ["SarBehavior", "MissionAbort", "Landed"]
    sar = uav_model.find("SarBehavior")
    assert [c.id for c in sar.children] == ["Idle", "TakeOff", "Loitering", "Coverage",
                                            "SelectRover", "Tracking", "LocalCoverage"]
    assert [s.id for s in uav_model.regions[1].states] == ["TargetMonitoring"]


@pytest.mark.parametrize("path", FIXTURES, ids=lambda p: p.name)
def test_fixture_corpus_parses_and_round_trips(path, registry):
    text = path.read_text(encoding="utf-8")
    model = parse_model(text, registry)
    assert serialize_model(model) == text
    assert parse_model(serialize_model(model), registry) == model


def test_serialization_is_byte_stable(uav_model):
    assert serialize_model(uav_model) == serialize_model(uav_model)
    assert serialize_model(uav_model).encode("utf-8").count(b"\r") == 0


def test_minimal_golden(minimal_model):
    assert serialize_model(minimal_model) == (GOLDEN / "minimal.scxml").read_text(encoding="utf-8")


def test_load_document_metadata():
    d = load_document(MODELS / "minimal.scxml")
    assert d.version == "1" and d.path.endswith("minimal.scxml")
    assert d.model.name == "Root"


def test_dangling_target_is_validation_error(registry):
    text = doc('<state id="A" sf:type="HardwareFunction" sf:behavior="Idle">'
               '<transition event="e" target="B"/></state>', initial="A")
    with pytest.raises(ValidationError):
        parse_model(text, registry)


def test_empty_document_is_schema_error():
    with pytest.raises(SchemaError):
        parse_model(doc(""))


def test_unknown_element_is_schema_error():
    with pytest.raises(SchemaError):
        parse_model(doc('<state id="A" sf:type="HardwareFunction" sf:behavior="Idle"><onentry/></state>'))


def test_unknown_attribute_is_schema_error():
    with pytest.raises(SchemaError):
        parse_model(doc('<state id="A" colour="red" sf:type="HardwareFunction" sf:behavior="Idle"/>'))


def test_missing_id_is_schema_error():
    with pytest.raises(SchemaError):
        parse_model(doc('<state sf:type="HardwareFunction" sf:behavior="Idle"/>'))


def test_missing_version_is_schema_error():
    text = doc('<state id="A" sf:type="HardwareFunction" sf:behavior="Idle"/>').replace(' version="1"', "")
    with pytest.raises(SchemaError):
        parse_model(text)


def test_unknown_behavior_type_is_validation_error():
    with pytest.raises(ValidationError):
        parse_model(doc('<state id="A" sf:type="Teleport" sf:behavior="Idle"/>'))


def test_malformed_xml_reports_position():
    text = doc('\n<state id="A" sf:type="HardwareFunction"\n sf:behavior="Idle">')
    with pytest.raises(ParseError) as info:
        parse_model(text)
    assert info.value.line >= 2


# ------------------------------------------------------------ swarm config


def test_swarm_config_example(tmp_path):
    for name in ("sar_uav.scxml", "rescue_ugv.scxml"):
        (tmp_path / name).write_text((MODELS / name).read_text(encoding="utf-8"), encoding="utf-8")
    comp = parse_swarm_config("uav: count=1 model=sar_uav.scxml; ugv: count=2 model=rescue_ugv.scxml",
                              tmp_path)
    assert comp.count("UAV") == 1 and comp.count("UGV") == 2
    assert comp.entries[1].model_file.endswith("rescue_ugv.scxml")


def test_swarm_config_parameters_and_version(tmp_path):
    (tmp_path / "m.scxml").write_text((MODELS / "sar_uav.scxml").read_text(encoding="utf-8"), encoding="utf-8")
    comp = parse_swarm_config("version: 1\n# comment\nuav: count=3 model=m.scxml speed=1.5 label=red\n", tmp_path)
    assert comp.version == 1
    assert dict(comp.entries[0].parameters) == {"speed": 1.5, "label": "red"}


def test_swarm_config_zero_count(tmp_path):
    (tmp_path / "m.scxml").write_text((MODELS / "minimal.scxml").read_text(encoding="utf-8"), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        parse_swarm_config("uav: count=0 model=m.scxml", tmp_path)
    assert info.value.line == 1


def test_swarm_config_missing_model(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_swarm_config("\nugv: count=2 model=nowhere.scxml", tmp_path)
    assert "nowhere.scxml" in str(info.value) and info.value.line == 2


def test_swarm_config_duplicate_type(tmp_path):
    (tmp_path / "m.scxml").write_text((MODELS / "minimal.scxml").read_text(encoding="utf-8"), encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_swarm_config("uav: count=1 model=m.scxml\nuav: count=1 model=m.scxml", tmp_path)


@pytest.mark.parametrize("text", ["tank: count=1 model=m.scxml", "uav count=1", "uav: count=x model=m.scxml",
                                  "version: 2", "uav: model=m.scxml"])
def test_swarm_config_rejects(tmp_path, text):
    (tmp_path / "m.scxml").write_text((MODELS / "minimal.scxml").read_text(encoding="utf-8"), encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_swarm_config(text, tmp_path)


# ------------------------------------------------------ random round trip

TYPES = [BehaviorType.SWARM_BEHAVIOR, BehaviorType.SWARM_FUNCTION, BehaviorType.HARDWARE_FUNCTION]
KINDS = ["int", "real", "string", "position"]
guards = st.one_of(
    st.none(),
    st.builds(Guard, st.sampled_from(["n", "sender", "targetId"]), st.sampled_from(["==", "!=", "<", ">"]),
              st.one_of(st.integers(-99, 99), st.text("ab <&\"'", max_size=5))))


@st.composite
def models(draw):
    ids = count()

    def container(depth):
        n = draw(st.integers(1, 3))
        nodes = []
        names = [f"S{next(ids)}" for _ in range(n)]
        for name in names:
            if depth < 2 and draw(st.booleans()) and draw(st.booleans()):
                children = container(depth + 1)
                node = StateNode(name, BehaviorType.COMPLEX_BEHAVIOR, children=children,
                                 initial=children[0].id)
            elif len(nodes) and draw(st.integers(0, 4)) == 0:
                nodes.append(StateNode(name, final=True))
                continue
            else:
                decl = st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.sampled_from(KINDS)), max_size=2)
                node = StateNode(name, draw(st.sampled_from(TYPES)), draw(st.sampled_from(["Idle", "Walk"])),
                                 inputs=tuple(draw(decl)), outputs=tuple(draw(decl)))
            trans = tuple(Transition(draw(st.sampled_from(["go", "stop", "__done__"])),
                                     draw(st.sampled_from(names)), draw(guards))
                          for _ in range(draw(st.integers(0, 2))))
            nodes.append(StateNode(node.id, node.behavior_type, node.behavior_name, node.inputs,
                                   node.outputs, node.children, node.initial, trans))
        return tuple(nodes)

    regions = tuple(Region(*(lambda s: (s[0].id, s))(container(0))) for _ in range(draw(st.integers(1, 3))))
    return BehaviorModel("M", regions, parallel=len(regions) > 1 or draw(st.booleans()))


@given(models())
def test_random_models_round_trip(model):
    text = serialize_model(model)
    assert parse_model(text) == model
    assert serialize_model(parse_model(text)) == text
