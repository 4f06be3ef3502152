"""Desk-scale semi-supervised learning lab."""

__version__ = "0.1.0"
