"""Segment-wise full-song symbolic music generation toolkit."""

__version__ = "0.1.0"
