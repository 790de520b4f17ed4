"""Metric-aware quality measures and r-adaptation for high-order
simplicial meshes."""

__version__ = "0.1.0"
