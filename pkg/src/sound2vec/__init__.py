"""Convolutional-embedding CRNN speech recognition with CTC, built on numpy."""

__version__ = "0.1.0"
