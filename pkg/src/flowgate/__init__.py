"""Conditional continuous normalizing flows with learned solver tolerances."""

__version__ = "0.1.0"
