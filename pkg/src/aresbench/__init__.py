"""Desk-scale adversarial and corruption robustness benchmark built on numpy."""

__version__ = "0.1.0"
