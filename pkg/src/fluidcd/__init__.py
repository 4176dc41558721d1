"""Fluid-diffusion graph construction and spectral community detection."""

__version__ = "0.1.0"
