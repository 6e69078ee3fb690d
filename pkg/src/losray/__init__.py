"""Deterministic 2.5D radio ray tracing with vertex-level line-of-sight reconstruction."""

__version__ = "0.1.0"
