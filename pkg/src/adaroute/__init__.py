"""Adaptive subsequence/resolution routing for sequence recognition."""

__version__ = "0.1.0"
