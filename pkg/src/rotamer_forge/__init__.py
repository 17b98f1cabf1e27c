"""Atom-level energy-based models of protein side-chain conformations."""

__version__ = "0.1.0"
