"""Multi-label herb prescription generation from face images, in numpy."""

__version__ = "0.1.0"
