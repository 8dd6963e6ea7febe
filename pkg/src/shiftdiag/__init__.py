"""Distribution-shift detection and diagnosis between reference and current data."""

__version__ = "0.1.0"
