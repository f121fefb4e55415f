"""Vision-based flocking by imitation of a position-based expert."""

__version__ = "0.1.0"
