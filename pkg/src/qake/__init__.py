"""Quantum authenticated key expansion toolkit."""

__version__ = "0.1.0"
