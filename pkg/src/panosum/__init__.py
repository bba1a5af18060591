"""Panoramic scene summaries from body-worn camera frame sequences."""

__version__ = "0.1.0"
