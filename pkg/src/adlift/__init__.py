"""Estimate the immediate website-visit lift of individual TV ads."""

__version__ = "0.1.0"
