"""Fairness audit toolkit for library reference responses from chat models."""

__version__ = "0.1.0"
