import pytest
from hypothesis import HealthCheck, settings

from swarmforge.behaviors import default_registry
from swarmforge.sim.world import builtin_model

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SCXML_HEAD = ('<scxml xmlns="http://www.w3.org/2005/07/scxml" '
              'xmlns:sf="urn:swarmforge:behavior:1" version="1" name="{name}"{extra}>')


def doc(body: str, name: str = "T", initial: str | None = None) -> str:
    extra = f' initial="{initial}"' if initial else ""
    return SCXML_HEAD.format(name=name, extra=extra) + body + "</scxml>"


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def uav_model():
    return builtin_model("sar_uav.scxml")


@pytest.fixture(scope="session")
def ugv_model():
    return builtin_model("rescue_ugv.scxml")


@pytest.fixture(scope="session")
def minimal_model():
    return builtin_model("minimal.scxml")


def relocate(world, tid: int, x: float, y: float) -> None:
    """Move a live target to ``(x, y)``, keeping the world's indexes in sync."""
    t = world.targets[tid]
    world._place(t, -1)
    t.x, t.y = x, y
    world._place(t, +1)


def mission(world, max_ticks: int = 10_000) -> int:
    """Drive a prepared world like a SAR run; returns the mission start tick."""
    from swarmforge.sim.world import UAV, tick

    world.inject("launch")
    start = None
    while world.tick < max_ticks:
        tick(world)
        if start is None:
            if all(s == "Loitering" for s in world.leaf_states(UAV)):
                world.inject("missionStart")
                start = world.tick
        elif not world.has_targets:
            break
    return start


# ------------------------------------------------------------------
# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
