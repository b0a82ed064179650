"""Stability constants of Stokes-like virtual element spaces in 2D."""

__version__ = "0.1.0"
