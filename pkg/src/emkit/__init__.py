"""Desk-scale EM volume toolkit: cutout ingest, 3D Sobel features, compact graphs."""

from emkit.volume import Extent3D, Volume3D, FloatVolume3D, SliceImage, VolumeStats
from emkit.gradient import Axis, GradientField, BinaryVolume
from emkit.graph import CompactGraph

__version__ = "0.1.0"

__all__ = [
    "Extent3D",
    "Volume3D",
    "FloatVolume3D",
    "SliceImage",
    "VolumeStats",
    "Axis",
    "GradientField",
    "BinaryVolume",
    "CompactGraph",
]
