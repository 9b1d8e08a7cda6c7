"""Joint detection and tracking of small moving objects in video."""

__version__ = "0.1.0"
