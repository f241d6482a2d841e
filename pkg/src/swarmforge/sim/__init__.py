"""Abstract grid-world simulator."""
from .config import WorldConfig, load_world_config, parse_world_config
from .runs import RunResult, TargetTimes, TickCapExceeded, run_coverage, run_sar, write_logs
from .world import Agent, SimulationError, Target, World, covered_fraction, init_world, tick

__all__ = [
    "Agent", "RunResult", "SimulationError", "Target", "TargetTimes", "TickCapExceeded",
    "World", "WorldConfig", "covered_fraction", "init_world", "load_world_config",
    "parse_world_config", "run_coverage", "run_sar", "tick", "write_logs",
]
