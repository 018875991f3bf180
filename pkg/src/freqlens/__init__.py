"""Frequency-domain analysis of adversarial robustness for small CNNs."""

__version__ = "0.1.0"
