"""Compressible fluid coupled to a linear elastic shell on a moving boundary."""

__version__ = "0.1.0"
