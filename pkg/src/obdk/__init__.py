"""Spectral toolkit for decay analysis of the undamped, inviscid Oldroyd-B system."""

__version__ = "0.1.0"
