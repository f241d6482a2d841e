"""Reusable behavior library for the search-and-rescue mission."""
from __future__ import annotations

from ..fsm import BehaviorType
from . import sar
from .registry import (
    BehaviorDescriptor,
    DuplicateName,
    LibraryLayer,
    NotFound,
    Registry,
)
from .sar import Assignment, Command, NoIdleRover, select_rover

SB = BehaviorType.SWARM_BEHAVIOR
SF = BehaviorType.SWARM_FUNCTION
HF = BehaviorType.HARDWARE_FUNCTION

TARGET = (("targetId", "int"), ("position", "position"))

SAR_BEHAVIORS = (
    BehaviorDescriptor(
        "Coverage", SB,
        "Fly over the mission area in search of targets; stops on the first find.",
        inputs=(), outputs=TARGET, emits=("targetFound",),
        tick=sar.coverage_tick,
    ),
    BehaviorDescriptor(
        "Tracking", SB,
        "Keep track of a found target and report its position changes.",
        inputs=(("targetId", "int"),), outputs=(("position", "position"),),
        emits=("targetUpdate", "targetLost"),
        tick=sar.tracking_tick,
    ),
    BehaviorDescriptor(
        "LocalCoverage", SB,
        "Spiral around the last known position of a lost target.",
        inputs=(("lastPosition", "position"),), outputs=TARGET,
        emits=("targetFound",),
        tick=sar.local_coverage_tick,
    ),
    BehaviorDescriptor(
        "TargetMonitoring", SF,
        "Track which targets the swarm has found, assigned and rescued.",
        inputs=(), outputs=(), emits=(),
        observe=sar.target_monitoring_observe,
    ),
    BehaviorDescriptor(
        "SelectRover", SF,
        "Assign the closest idle UGV to the found target.",
        inputs=TARGET, outputs=(("ugvId", "int"),) + TARGET,
        emits=("targetAssigned",),
        tick=sar.select_rover_tick,
    ),
    BehaviorDescriptor(
        "Idle", HF, "Stay in place.", tick=sar.idle_tick,
    ),
    BehaviorDescriptor(
        "Loitering", HF, "Hover stationary.", tick=sar.idle_tick,
    ),
    BehaviorDescriptor(
        "TakeOff", HF, "Lift off to the operating altitude.",
        inputs=(("altitude", "real"),), tick=sar.take_off_tick,
    ),
    BehaviorDescriptor(
        "MissionAbort", HF, "Land.", tick=sar.mission_abort_tick,
    ),
    BehaviorDescriptor(
        "MoveToTarget", HF, "Drive straight to the target position.",
        inputs=TARGET, outputs=(), emits=("targetRescued",),
        tick=sar.move_to_target_tick,
    ),
    BehaviorDescriptor(
        "ReturnHome", HF, "Drive back to the starting position.",
        tick=sar.return_home_tick,
    ),
)


def default_registry() -> Registry:
    return Registry(SAR_BEHAVIORS)


__all__ = [
    "Assignment", "BehaviorDescriptor", "Command", "DuplicateName", "LibraryLayer",
    "NoIdleRover", "NotFound", "Registry", "SAR_BEHAVIORS", "default_registry",
    "select_rover",
]
