"""Deterministic simulator for blockchain consensus protocols."""

__version__ = "0.1.0"
