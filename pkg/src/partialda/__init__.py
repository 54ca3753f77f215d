"""Partial domain adaptation with balanced adversarial alignment and complement entropy."""

__version__ = "0.1.0"
