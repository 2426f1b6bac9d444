"""Blockchain-secured resource allocation for mobile edge computing."""

__version__ = "0.1.0"
