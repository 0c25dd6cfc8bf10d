"""Discriminant structured dictionary learning for oximetry screening."""

__version__ = "0.1.0"
