"""Collaborative logistic regression over commutatively encrypted agency data."""

__version__ = "0.1.0"
