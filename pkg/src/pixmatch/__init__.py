"""Pixel-space map matching for cellular trajectories.

Pipeline: rasterize a tower-observation trajectory and the road network into a
shared georeferenced grid, derive a calibrated pixel mask (deterministic
distance-field baseline or an externally trained model), then run a
budget-constrained label-setting search over the road graph to recover a
topologically valid road-ID sequence.
"""

__version__ = "0.1.0"
