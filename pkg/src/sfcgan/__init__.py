"""Bidirectional functional/structural connectome translation."""

__version__ = "0.1.0"
