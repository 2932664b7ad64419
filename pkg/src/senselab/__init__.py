"""Held-out-word LSTM word sense disambiguation at desk scale."""

__version__ = "0.1.0"
