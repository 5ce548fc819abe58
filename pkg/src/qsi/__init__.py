"""Quadrature-noise shadow imaging: simulation, reconstruction and SNR analysis."""

__version__ = "0.1.0"
