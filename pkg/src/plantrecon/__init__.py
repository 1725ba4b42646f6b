"""Multi-view recovery of per-leaf 3D structure of thin grass-like
plants from calibrated binary silhouettes."""

__version__ = "0.1.0"
