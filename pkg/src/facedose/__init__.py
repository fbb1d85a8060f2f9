"""facedose: dose-response planning for localized facial-morphology simulation."""

__version__ = "0.1.0"
