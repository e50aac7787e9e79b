"""Multi-simulator lane-keeping test generation."""

__version__ = "0.1.0"
