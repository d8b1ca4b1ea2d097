"""Sparse identification of delay equations with distributed memory."""

__version__ = "0.1.0"
