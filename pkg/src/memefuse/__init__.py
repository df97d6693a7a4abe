"""Troll-meme classification with visual, textual and early-fusion models."""

__version__ = "0.1.0"
