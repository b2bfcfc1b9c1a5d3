"""Thin adapter: promptable-segmentation model outputs to scene mask files."""

__version__ = "0.1.0"
