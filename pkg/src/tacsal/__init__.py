"""Synthetic tactile saliency: depth translation, saliency extraction, learned noise, edge following."""

__version__ = "0.1.0"
