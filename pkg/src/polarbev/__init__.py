"""Polar bird's-eye-view perception from multi-camera images."""

__version__ = "0.1.0"
