"""Desk-scale multi-scale-fusion speech separation toolkit."""

__version__ = "0.1.0"
