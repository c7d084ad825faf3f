"""Serve a fine-tuned transformer classifier over the segvote scorer protocol."""

__version__ = "0.1.0"
