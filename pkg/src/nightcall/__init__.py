"""Spectrogram object detection toolkit for nocturnal bird calls."""

__version__ = "0.1.0"
