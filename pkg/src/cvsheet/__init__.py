"""Current-vortex sheet numerics on a flattened two-layer channel."""
__version__ = "0.1.0"
