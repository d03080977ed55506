"""Improved Memories Learning: reinforcement learning by interpolating improved experiences."""

__version__ = "0.1.0"
