"""Siamese tracker with hierarchical fusion, spatial-aware head and CF template layer."""

__version__ = "0.1.0"
