"""Semi-supervised multi-view crowd counting by ranking multi-view fusion models."""

__version__ = "0.1.0"
