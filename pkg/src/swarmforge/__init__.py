"""Model-driven toolkit for swarm missions of UAVs and UGVs."""

__version__ = "0.1.0"
