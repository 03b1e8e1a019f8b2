"""Adaptive high-frequency preprocessing before video encoding.

Pseudo-labels videos with the rate-distortion-best unsharp-mask strength,
trains a frequency-attentive pyramid network to predict that strength, and
applies it ahead of the encoder.
"""
__version__ = "0.1.0"
