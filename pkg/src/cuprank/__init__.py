"""Contextual cold-start destination ranking."""

__version__ = "0.1.0"
