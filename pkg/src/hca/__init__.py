"""Hierarchical classification adjustment for imbalanced regression."""

__version__ = "0.1.0"
