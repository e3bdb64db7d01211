"""Supervised off-policy ranking with a hierarchical set-transformer scorer."""

__version__ = "0.1.0"
