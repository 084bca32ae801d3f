"""Convolutional Koopman networks for modal analysis of video."""

__version__ = "0.1.0"
