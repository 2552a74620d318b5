"""Multiscale dilated-convolution spectrogram classifiers and their experiment drivers."""

__version__ = "0.1.0"
