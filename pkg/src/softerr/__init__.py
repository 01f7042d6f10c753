"""Bit-flip fault simulation and statistical error models for quantized
neural-network inference."""

__version__ = "0.1.0"
