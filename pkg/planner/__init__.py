"""Compute-graph cost analysis and training capacity planning."""

__version__ = "1.0.0"
