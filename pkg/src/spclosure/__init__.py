"""Structure-preserving neural closures for 1D Burgers and KdV."""

__version__ = "0.1.0"
