"""Distributed multi-agent PPO with graph-attention message passing."""

__version__ = "0.1.0"
