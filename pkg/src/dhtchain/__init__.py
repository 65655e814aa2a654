"""Blockchain validation decoupled from state storage."""

__version__ = "0.1.0"
