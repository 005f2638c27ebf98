"""Attention-based graph message passing for segmenting the common object
across video frames or related images, trained end-to-end on synthetic data."""

__version__ = "0.1.0"
