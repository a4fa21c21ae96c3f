"""Verification toolkit for Lie algebroids given in coordinates."""

__version__ = "0.1.0"
