"""Noise-adaptive search of parameterized quantum circuits and qubit mappings."""

__version__ = "0.1.0"
