"""Mask-based unsupervised content transfer between unpaired image domains."""

__version__ = "0.1.0"
