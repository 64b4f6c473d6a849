"""Grassmannian mixture-of-experts routing: gating, bounds, normalizers, training."""

__version__ = "1.0.0"
