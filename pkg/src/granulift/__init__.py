"""Granularity-consistent 2D mask tracking and 3D pseudo-label fusion."""

from . import (  # noqa: F401
    errors,
    evalmetrics,
    fusion,
    lift,
    maskproc,
    scene_io,
    synth,
    tracker,
)

__version__ = "0.1.0"
