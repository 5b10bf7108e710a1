"""Inverse-dynamics safety filtering for legged robots."""
__version__ = "0.1.0"
