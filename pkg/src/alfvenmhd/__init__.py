"""Pseudo-spectral Elsasser MHD with characteristic-geometry diagnostics."""

__version__ = "0.1.0"
