"""Lindstedt series for lower-dimensional elliptic tori: trees, resummation, verification."""

__version__ = "0.1.0"
