"""Learning continuous control for active landmark localisation."""

__version__ = "0.1.0"
