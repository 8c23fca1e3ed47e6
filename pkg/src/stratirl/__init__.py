"""Kernel-based inverse reinforcement learning for strategy identification in replayed matches."""

__version__ = "0.1.0"
