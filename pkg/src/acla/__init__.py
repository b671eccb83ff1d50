"""Cross-layer attention and adaptive cross-layer attention for image restoration."""

__version__ = "0.1.0"
