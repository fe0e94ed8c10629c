"""Numerical verification toolkit for hyper-decoherence of quantum boxes onto CPTP maps."""

__version__ = "0.1.0"
