"""Seeded random streams.

Every stream is a PCG64 generator keyed by ``(seed, purpose, index)``
through :class:`numpy.random.SeedSequence` spawn keys, so streams are
independent and adding an agent never perturbs another agent's draws.
"""
from __future__ import annotations

import numpy as np

AGENT = 0
TARGETS = 1
BUS = 2
MOBILITY = 3


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(seed, spawn_key=(purpose, index))
    return np.random.Generator(np.random.PCG64(ss))


def agent_stream(seed: int, agent_id: int) -> np.random.Generator:
    return stream(seed, AGENT, agent_id)
