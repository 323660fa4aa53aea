"""Lightweight encoder-decoder foreground segmentation for rainy scenes."""

__version__ = "0.1.0"
