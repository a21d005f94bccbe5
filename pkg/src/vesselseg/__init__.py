"""Retinal vessel segmentation with wavelet-enriched inputs and a compact FCN."""

__version__ = "0.1.0"
