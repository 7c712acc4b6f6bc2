"""Selective state-space (Mamba-style) in-context learning of Gaussian single-index models."""

__version__ = "0.1.0"
