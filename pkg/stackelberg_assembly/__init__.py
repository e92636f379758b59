"""Stackelberg double deep Q-learning for two-robot collaborative assembly."""

__version__ = "0.1.0"
